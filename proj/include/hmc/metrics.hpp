#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hmc/taxonomy.hpp"
#include "hmc/tensor.hpp"

namespace hmc {

using LabelSet = std::vector<std::size_t>;

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

namespace detail {

inline double safe_div(double a, double b) { return b > 0.0 ? a / b : 0.0; }

inline double f1_of(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

struct ClassCounts {
  std::vector<std::size_t> tp, fp, support;

  explicit ClassCounts(std::size_t n) : tp(n), fp(n), support(n) {}

  // Per-class P/R/F1 averaged with weights support_c / sum(support).
  PRF weighted() const {
    PRF out;
    const double total = static_cast<double>(std::accumulate(support.begin(), support.end(), std::size_t{0}));
    if (total == 0.0) return out;
    for (std::size_t c = 0; c < support.size(); ++c) {
      if (support[c] == 0) continue;
      const double p = safe_div(static_cast<double>(tp[c]), static_cast<double>(tp[c] + fp[c]));
      const double r = static_cast<double>(tp[c]) / static_cast<double>(support[c]);
      const double w = static_cast<double>(support[c]) / total;
      out.precision += w * p;
      out.recall += w * r;
      out.f1 += w * f1_of(p, r);
    }
    return out;
  }
};

}  // namespace detail

/// Support-weighted precision, recall and F1 for a multi-class level.
/// Classes absent from the ground truth do not enter the average. F1 is
/// averaged per class, so it need not lie between OP and OR.
inline PRF overall_prf(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                       std::size_t n_classes) {
  if (truth.size() != predicted.size()) throw DimensionError("overall_prf: truth and prediction counts differ");
  if (truth.empty()) throw ContractError("overall_prf needs a nonempty evaluation set");
  detail::ClassCounts k(n_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= n_classes || predicted[i] >= n_classes) throw ContractError("overall_prf: label out of range");
    ++k.support[truth[i]];
    if (truth[i] == predicted[i]) {
      ++k.tp[truth[i]];
    } else {
      ++k.fp[predicted[i]];
    }
  }
  return k.weighted();
}

/// Multi-label form: each label is a binary class scored over all products,
/// support = number of products carrying it.
inline PRF overall_prf_multilabel(const std::vector<LabelSet>& truth, const std::vector<LabelSet>& predicted,
                                  std::size_t n_labels) {
  if (truth.size() != predicted.size()) throw DimensionError("overall_prf: truth and prediction counts differ");
  if (truth.empty()) throw ContractError("overall_prf needs a nonempty evaluation set");
  detail::ClassCounts k(n_labels);
  std::vector<char> in_truth(n_labels);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    std::fill(in_truth.begin(), in_truth.end(), 0);
    for (std::size_t l : truth[i]) {
      in_truth.at(l) = 1;
      ++k.support[l];
    }
    for (std::size_t l : predicted[i]) {
      if (in_truth.at(l)) {
        ++k.tp[l];
      } else {
        ++k.fp[l];
      }
    }
  }
  return k.weighted();
}

inline double accuracy(std::span<const std::size_t> truth, std::span<const std::size_t> predicted) {
  if (truth.size() != predicted.size()) throw DimensionError("accuracy: truth and prediction counts differ");
  if (truth.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += truth[i] == predicted[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

/// Labels ordered by descending score, ascending label id on ties.
inline std::vector<std::size_t> rank_labels(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

struct AtKResult {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t evaluated = 0;              // products with nonempty truth
  std::vector<double> per_product_precision;
  std::vector<double> per_product_recall;
};

/// P@k, R@k, F1@k with k = |truth| per product, macro-averaged over products
/// whose truth set is nonempty.
inline AtKResult at_k(const Tensor& scores, const std::vector<LabelSet>& truth) {
  if (scores.rows() != truth.size()) throw DimensionError("at_k: score rows and truth sets differ");
  AtKResult out;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const std::size_t k = truth[i].size();
    if (k == 0) continue;
    const auto order = rank_labels(scores.row(i));
    std::size_t hits = 0;
    for (std::size_t j = 0; j < k && j < order.size(); ++j) {
      hits += std::find(truth[i].begin(), truth[i].end(), order[j]) != truth[i].end();
    }
    const double p = static_cast<double>(hits) / static_cast<double>(k);
    const double r = static_cast<double>(hits) / static_cast<double>(truth[i].size());
    out.per_product_precision.push_back(p);
    out.per_product_recall.push_back(r);
    out.precision += p;
    out.recall += r;
    out.f1 += detail::f1_of(p, r);
    ++out.evaluated;
  }
  if (out.evaluated) {
    const double n = static_cast<double>(out.evaluated);
    out.precision /= n;
    out.recall /= n;
    out.f1 /= n;
  }
  return out;
}

/// Micro AP over all (product, label) pairs ranked by descending score
/// (ties: ascending label id, then product index): the mean of
/// precision-at-rank over the ranks holding positives. Absent when there are
/// no positives.
inline std::optional<double> average_precision(const Tensor& scores, const std::vector<LabelSet>& truth) {
  if (scores.rows() != truth.size()) throw DimensionError("average_precision: score rows and truth sets differ");
  struct Pair {
    double score;
    std::size_t label;
    std::size_t product;
    bool positive;
  };
  std::vector<Pair> pairs;
  const std::size_t n = scores.cols();
  std::size_t positives = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    for (std::size_t l = 0; l < n; ++l) {
      const bool pos = std::find(truth[i].begin(), truth[i].end(), l) != truth[i].end();
      positives += pos;
      pairs.push_back({scores.at(i, l), l, i, pos});
    }
  }
  if (positives == 0) return std::nullopt;
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.label != b.label) return a.label < b.label;
    return a.product < b.product;
  });
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < pairs.size(); ++r) {
    if (!pairs[r].positive) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(r + 1);
  }
  return sum / static_cast<double>(positives);
}

/// Labels whose score is strictly greater than `threshold`.
inline LabelSet threshold_predict(std::span<const double> scores, double threshold = 0.75) {
  if (!(threshold >= 0.0 && threshold < 1.0)) throw ContractError("threshold must lie in [0, 1)");
  LabelSet out;
  for (std::size_t l = 0; l < scores.size(); ++l) {
    if (scores[l] > threshold) out.push_back(l);
  }
  return out;
}

inline std::vector<LabelSet> threshold_predict(const Tensor& scores, double threshold = 0.75) {
  std::vector<LabelSet> out;
  out.reserve(scores.rows());
  for (std::size_t i = 0; i < scores.rows(); ++i) out.push_back(threshold_predict(scores.row(i), threshold));
  return out;
}

inline double mean_set_size(const std::vector<LabelSet>& sets) {
  if (sets.empty()) return 0.0;
  std::size_t total = 0;
  for (const auto& s : sets) total += s.size();
  return static_cast<double>(total) / static_cast<double>(sets.size());
}

inline double mean_predicted_attributes(const Tensor& scores, double threshold = 0.75) {
  if (scores.empty()) return 0.0;
  return mean_set_size(threshold_predict(scores, threshold));
}

/// Micro recall of predicted sets against reference sets.
inline double set_recall(const std::vector<LabelSet>& predicted, const std::vector<LabelSet>& reference) {
  std::size_t hits = 0, total = 0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    total += reference[i].size();
    for (std::size_t l : reference[i]) {
      hits += std::find(predicted[i].begin(), predicted[i].end(), l) != predicted[i].end();
    }
  }
  return detail::safe_div(static_cast<double>(hits), static_cast<double>(total));
}

struct LevelPrediction {
  std::size_t category = 0;
  std::size_t subcategory = 0;
  LabelSet attributes;
};

struct InconsistentPair {
  std::size_t product;
  std::string category_id;
  std::string other_id;
};

struct AuditResult {
  std::size_t pairs = 0;
  std::size_t inconsistent = 0;
  double rate = 0.0;
  std::vector<InconsistentPair> inconsistent_pairs;
};

/// Each product contributes one (category, sub-category) pair plus one
/// (category, attribute) pair per predicted attribute.
inline AuditResult audit_cooccurrence(const std::vector<LevelPrediction>& predictions, const CategoryTree& tree) {
  AuditResult out;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& p = predictions[i];
    out.pairs += 1 + p.attributes.size();
    const auto r = is_consistent(tree, p.category, p.subcategory, p.attributes);
    for (const auto& [cat, other] : r.inconsistent_pairs) out.inconsistent_pairs.push_back({i, cat, other});
  }
  out.inconsistent = out.inconsistent_pairs.size();
  out.rate = detail::safe_div(static_cast<double>(out.inconsistent), static_cast<double>(out.pairs));
  return out;
}

}  // namespace hmc
