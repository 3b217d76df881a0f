#pragma once

// Slow, independent re-derivations of the evaluation metrics. Written from
// the definitions with different mechanics than the library (confusion
// matrices, exhaustive top-k enumeration, explicit PR-curve integration).

#include <algorithm>
#include <cstddef>
#include <optional>
#include <random>
#include <vector>

#include "hmc/tensor.hpp"

namespace hmc::oracle {

struct PRF {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

inline PRF from_binary_tables(const std::vector<std::vector<int>>& truth, const std::vector<std::vector<int>>& pred) {
  // truth[c][i], pred[c][i]: does product i belong to / get predicted as class c
  PRF out;
  double total = 0.0;
  for (const auto& t : truth) {
    for (int v : t) total += v;
  }
  if (total == 0.0) return out;
  for (std::size_t c = 0; c < truth.size(); ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth[c].size(); ++i) {
      tp += truth[c][i] && pred[c][i];
      fp += !truth[c][i] && pred[c][i];
      fn += truth[c][i] && !pred[c][i];
    }
    const double support = tp + fn;
    if (support == 0) continue;
    const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double r = tp / support;
    const double f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    out.precision += support / total * p;
    out.recall += support / total * r;
    out.f1 += support / total * f;
  }
  return out;
}

/// Multi-class P/R/F1 via a full confusion matrix.
inline PRF multiclass_prf(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& pred,
                          std::size_t n_classes) {
  std::vector<std::vector<double>> conf(n_classes, std::vector<double>(n_classes, 0.0));
  for (std::size_t i = 0; i < truth.size(); ++i) conf[truth[i]][pred[i]] += 1.0;
  PRF out;
  const double n = static_cast<double>(truth.size());
  for (std::size_t c = 0; c < n_classes; ++c) {
    double row = 0, col = 0;
    for (std::size_t j = 0; j < n_classes; ++j) {
      row += conf[c][j];
      col += conf[j][c];
    }
    if (row == 0) continue;
    const double p = col > 0 ? conf[c][c] / col : 0.0;
    const double r = conf[c][c] / row;
    const double f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    out.precision += row / n * p;
    out.recall += row / n * r;
    out.f1 += row / n * f;
  }
  return out;
}

inline PRF multilabel_prf(const std::vector<std::vector<std::size_t>>& truth,
                          const std::vector<std::vector<std::size_t>>& pred, std::size_t n_labels) {
  std::vector<std::vector<int>> t(n_labels, std::vector<int>(truth.size())), p = t;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    for (std::size_t l : truth[i]) t[l][i] = 1;
    for (std::size_t l : pred[i]) p[l][i] = 1;
  }
  return from_binary_tables(t, p);
}

/// The top-k label set of one score row, found by testing every k-subset
/// against the ranking rule (higher score first, lower id on ties).
inline std::vector<std::size_t> exhaustive_top_k(const std::vector<double>& s, std::size_t k) {
  const std::size_t n = s.size();
  auto before = [&](std::size_t a, std::size_t b) { return s[a] > s[b] || (s[a] == s[b] && a < b); };
  std::vector<std::size_t> found;
  std::size_t matches = 0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != k) continue;
    bool ok = true;
    for (std::size_t a = 0; a < n && ok; ++a) {
      if (!(mask >> a & 1u)) continue;
      for (std::size_t b = 0; b < n && ok; ++b) {
        if (!(mask >> b & 1u) && !before(a, b)) ok = false;
      }
    }
    if (ok) {
      ++matches;
      found.clear();
      for (std::size_t a = 0; a < n; ++a) {
        if (mask >> a & 1u) found.push_back(a);
      }
    }
  }
  if (matches != 1) throw std::logic_error("top-k set must be unique");
  return found;
}

struct AtK {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

inline AtK at_k(const Tensor& scores, const std::vector<std::vector<std::size_t>>& truth) {
  AtK out;
  std::size_t evaluated = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const std::size_t k = truth[i].size();
    if (k == 0) continue;
    std::vector<double> row(scores.row(i).begin(), scores.row(i).end());
    const auto top = exhaustive_top_k(row, k);
    double hits = 0;
    for (std::size_t l : top) hits += std::count(truth[i].begin(), truth[i].end(), l) > 0;
    const double p = hits / static_cast<double>(top.size());
    const double r = hits / static_cast<double>(k);
    out.precision += p;
    out.recall += r;
    out.f1 += p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    ++evaluated;
  }
  if (evaluated) {
    out.precision /= static_cast<double>(evaluated);
    out.recall /= static_cast<double>(evaluated);
    out.f1 /= static_cast<double>(evaluated);
  }
  return out;
}

/// Micro AP by integrating the step PR curve: sum over cutoffs of
/// (recall gain) * precision. Each pair's rank is counted directly.
inline std::optional<double> average_precision(const Tensor& scores, const std::vector<std::vector<std::size_t>>& truth) {
  struct P {
    double s;
    std::size_t label, product;
    bool pos;
  };
  std::vector<P> pairs;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    for (std::size_t l = 0; l < scores.cols(); ++l) {
      pairs.push_back({scores.at(i, l), l, i, std::count(truth[i].begin(), truth[i].end(), l) > 0});
    }
  }
  const std::size_t n = pairs.size();
  std::vector<std::size_t> at_rank(n);
  for (std::size_t a = 0; a < n; ++a) {
    std::size_t rank = 0;
    for (std::size_t b = 0; b < n; ++b) {
      const P &x = pairs[a], &y = pairs[b];
      const bool y_first = y.s > x.s || (y.s == x.s && (y.label < x.label || (y.label == x.label && y.product < x.product)));
      rank += y_first;
    }
    at_rank[rank] = a;
  }
  double positives = 0;
  for (const P& p : pairs) positives += p.pos;
  if (positives == 0) return std::nullopt;
  double ap = 0.0, tp = 0.0, prev_recall = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    tp += pairs[at_rank[r]].pos;
    const double precision = tp / static_cast<double>(r + 1);
    const double recall = tp / positives;
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

/// Random instance with `products` rows and `labels` labels. Scores are
/// drawn from a small grid so ties occur.
struct Instance {
  std::size_t labels = 0;
  std::vector<std::size_t> truth_class, pred_class;
  Tensor scores;
  std::vector<std::vector<std::size_t>> truth_sets;
};

inline Instance random_instance(std::mt19937_64& rng, std::size_t products, std::size_t labels) {
  Instance in;
  in.labels = labels;
  std::uniform_int_distribution<std::size_t> cls(0, labels - 1);
  std::uniform_int_distribution<int> grid(0, 10);
  std::bernoulli_distribution pos(0.35);
  in.scores = Tensor({products, labels});
  for (std::size_t i = 0; i < products; ++i) {
    in.truth_class.push_back(cls(rng));
    in.pred_class.push_back(cls(rng));
    std::vector<std::size_t> t;
    for (std::size_t l = 0; l < labels; ++l) {
      in.scores.at(i, l) = grid(rng) / 10.0;
      if (pos(rng)) t.push_back(l);
    }
    in.truth_sets.push_back(t);
  }
  return in;
}

}  // namespace hmc::oracle
