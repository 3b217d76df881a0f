#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "hmc/ops.hpp"
#include "hmc/tape.hpp"

namespace hmc {

inline constexpr double kLogClamp = 1e-12;

/// Per-class weights for each learned level.
struct ClassWeights {
  std::vector<double> category;
  std::vector<double> subcategory;
  std::vector<double> attribute;
};

namespace detail {

inline void require_positive_frequencies(std::span<const double> f) {
  if (f.empty()) throw ContractError("class_weights needs at least one class");
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (!(f[i] > 0.0) || !std::isfinite(f[i])) {
      throw ContractError("class " + std::to_string(i) + " has frequency " + std::to_string(f[i]) +
                          "; drop the class or smooth the counts");
    }
  }
}

}  // namespace detail

/// Inverse-frequency weights normalized to mean 1: w_c = (1/f_c) / mean_j(1/f_j).
/// `frequencies` must be a distribution over mutually exclusive classes.
inline std::vector<double> class_weights(std::span<const double> frequencies) {
  detail::require_positive_frequencies(frequencies);
  double total = 0.0;
  for (double f : frequencies) total += f;
  if (std::abs(total - 1.0) > 1e-9) {
    throw ContractError("multi-class frequencies must sum to 1, got " + std::to_string(total));
  }
  std::vector<double> w(frequencies.size());
  double mean_inv = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = 1.0 / frequencies[i];
    mean_inv += w[i];
  }
  mean_inv /= static_cast<double>(w.size());
  for (double& v : w) v /= mean_inv;
  return w;
}

/// Positive-term weights for a multi-label level from per-label positive
/// rates f_l in (0, 1): w_l = k / f_l with k = mean_l(1 - f_l). The weights
/// keep the inverse-frequency ratio law, and the weighted positive mass
/// summed over labels equals the negative mass.
inline std::vector<double> label_weights(std::span<const double> positive_rates) {
  detail::require_positive_frequencies(positive_rates);
  double k = 0.0;
  for (double f : positive_rates) {
    if (f >= 1.0) throw ContractError("label positive rate must be below 1, got " + std::to_string(f));
    k += 1.0 - f;
  }
  k /= static_cast<double>(positive_rates.size());
  std::vector<double> w(positive_rates.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = k / positive_rates[i];
  return w;
}

/// Batch mean of -w[target] * log(p[target]), log clamped at 1e-12.
inline Var weighted_ce(Var probs, std::span<const std::size_t> targets, std::span<const double> weights) {
  const Tensor& P = probs.value();
  const std::size_t rows = P.rows(), n = P.cols();
  if (targets.size() != rows) {
    throw DimensionError("weighted_ce: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rows) + " rows");
  }
  if (weights.size() != n) throw DimensionError("weighted_ce: weight count does not match class count");
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] >= n) throw ContractError("weighted_ce: target out of range");
    const double p = P[r * n + targets[r]];
    loss -= weights[targets[r]] * std::log(std::max(p, kLogClamp));
  }
  loss /= static_cast<double>(rows);
  std::vector<std::size_t> t(targets.begin(), targets.end());
  std::vector<double> w(weights.begin(), weights.end());
  return probs.tape->record(Tensor::scalar(loss), {probs},
                            [&P, t = std::move(t), w = std::move(w), rows, n](const Tensor& g,
                                                                              std::span<Tensor* const> in) {
    const double scale = g[0] / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const double p = P[r * n + t[r]];
      if (p > kLogClamp) (*in[0])[r * n + t[r]] -= scale * w[t[r]] / p;
    }
  });
}

/// Mean over batch rows and labels of
///   -[w_l t log(s) + (1 - t) log(1 - s)],
/// logs clamped at 1e-12. Weights scale the positive term only.
inline Var weighted_bce(Var scores, const Tensor& targets, std::span<const double> weights) {
  const Tensor& S = scores.value();
  if (targets.size() != S.size()) {
    throw DimensionError("weighted_bce: targets " + to_string(targets.shape()) + " vs scores " +
                         to_string(S.shape()));
  }
  const std::size_t rows = S.rows(), n = S.cols();
  if (weights.size() != n) throw DimensionError("weighted_bce: weight count does not match label count");
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) {
      const double s = S[r * n + j], t = targets[r * n + j];
      if (t != 0.0) loss -= weights[j] * t * std::log(std::max(s, kLogClamp));
      if (t != 1.0) loss -= (1.0 - t) * std::log(std::max(1.0 - s, kLogClamp));
    }
  }
  const double denom = static_cast<double>(rows * n);
  loss /= denom;
  std::vector<double> w(weights.begin(), weights.end());
  return scores.tape->record(Tensor::scalar(loss), {scores},
                             [&S, targets, w = std::move(w), rows, n, denom](const Tensor& g,
                                                                             std::span<Tensor* const> in) {
    const double scale = g[0] / denom;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t i = r * n + j;
        const double s = S[i], t = targets[i];
        double d = 0.0;
        if (t != 0.0 && s > kLogClamp) d -= w[j] * t / s;
        if (t != 1.0 && 1.0 - s > kLogClamp) d += (1.0 - t) / (1.0 - s);
        (*in[0])[i] += scale * d;
      }
    }
  });
}

/// Equal-weight sum of the three level losses and the L2 term.
inline Var total_loss(Var cat, Var sub, Var attr, Var l2) {
  const Var terms[] = {cat, sub, attr, l2};
  return add_scalars(terms);
}

}  // namespace hmc
