#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hmc/ops.hpp"
#include "hmc/tape.hpp"
#include "hmc/tensor.hpp"

namespace hmc {

using Rng = std::mt19937_64;

enum class Mode { train, eval };

/// Raised by the optimizer and training loop.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class InitScheme { glorot_uniform, zeros };

/// Uniform in +-sqrt(6 / (fan_in + fan_out)); rank-1 shapes are biases and
/// start at zero under either scheme.
inline Tensor init_params(const Shape& shape, Rng& rng, InitScheme scheme = InitScheme::glorot_uniform,
                          std::size_t fan_in = 0, std::size_t fan_out = 0) {
  Tensor t(shape);
  if (scheme == InitScheme::zeros || shape.size() < 2) return t;
  if (fan_in == 0) fan_in = shape[0];
  if (fan_out == 0) fan_out = shape[1];
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : t.storage()) v = dist(rng);
  return t;
}

/// y = x W + b with W stored as in x out.
class DenseLayer {
 public:
  DenseLayer() = default;
  DenseLayer(const std::string& name, std::size_t in, std::size_t out, Rng& rng, double l2_factor = 0.0,
             InitScheme scheme = InitScheme::glorot_uniform)
      : weight(name + ".weight", init_params({in, out}, rng, scheme)),
        bias(name + ".bias", Tensor({out})),
        l2_factor(l2_factor) {}

  static std::size_t parameter_count(std::size_t in, std::size_t out) { return in * out + out; }

  std::size_t in_features() const { return weight.value.shape()[0]; }
  std::size_t out_features() const { return weight.value.shape()[1]; }
  std::size_t parameter_count() const { return weight.size() + bias.size(); }

  Var forward(Tape& tape, Var x) {
    const Tensor& X = x.value();
    if (X.rank() != 2 || X.shape()[1] != in_features()) {
      throw DimensionError("dense layer " + weight.name + " expects input width " +
                           std::to_string(in_features()) + ", got " + to_string(X.shape()));
    }
    return add_bias(matmul(x, tape.param(weight)), tape.param(bias));
  }

  Parameter weight;
  Parameter bias;
  double l2_factor = 0.0;
};

/// Inverted dropout: survivors are scaled by 1/(1-rate) so eval is identity.
inline Var dropout(Var x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ContractError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::eval || rate == 0.0) return x;
  Tensor mask(x.shape());
  std::bernoulli_distribution keep(1.0 - rate);
  const double s = 1.0 / (1.0 - rate);
  for (double& m : mask.storage()) m = keep(rng) ? s : 0.0;
  return multiply_constant(x, std::move(mask));
}

/// Sum over layers of l2_factor * sum(w^2). Biases are not penalized.
inline double l2_penalty(std::span<const DenseLayer* const> layers) {
  double total = 0.0;
  for (const DenseLayer* layer : layers) {
    if (layer->l2_factor == 0.0) continue;
    double s = 0.0;
    for (double w : layer->weight.value.data()) s += w * w;
    total += layer->l2_factor * s;
  }
  return total;
}

/// Recorded form of l2_penalty; returns a scalar node (zero when no layer is penalized).
inline Var l2_penalty(Tape& tape, std::span<DenseLayer* const> layers) {
  std::vector<Var> terms;
  for (DenseLayer* layer : layers) {
    if (layer->l2_factor == 0.0) continue;
    terms.push_back(scale(sum_squares(tape.param(layer->weight)), layer->l2_factor));
  }
  if (terms.empty()) return tape.constant(Tensor::scalar(0.0));
  return add_scalars(terms);
}

struct AdamOptions {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Moments are created on the first step for
/// each parameter and stay shaped like it.
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  const AdamOptions& options() const { return options_; }
  long step_count() const { return step_; }

  void step(std::span<Parameter* const> params) {
    for (const Parameter* p : params) {
      if (!p->grad.all_finite()) throw TrainingError("non-finite gradient for parameter " + p->name);
    }
    if (first_moment_.empty()) {
      for (const Parameter* p : params) {
        first_moment_.emplace_back(p->value.shape());
        second_moment_.emplace_back(p->value.shape());
      }
    }
    if (first_moment_.size() != params.size()) {
      throw ContractError("Adam called with a different parameter list");
    }
    ++step_;
    const double b1 = options_.beta1, b2 = options_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = *params[i];
      Tensor& m = first_moment_[i];
      Tensor& v = second_moment_[i];
      if (m.shape() != p.value.shape()) throw ContractError("Adam moment shape mismatch for " + p.name);
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        const double g = p.grad[j];
        m[j] = b1 * m[j] + (1.0 - b1) * g;
        v[j] = b2 * v[j] + (1.0 - b2) * g * g;
        const double mhat = m[j] / c1;
        const double vhat = v[j] / c2;
        p.value[j] -= options_.learning_rate * mhat / (std::sqrt(vhat) + options_.epsilon);
      }
    }
  }

 private:
  AdamOptions options_;
  long step_ = 0;
  std::vector<Tensor> first_moment_;
  std::vector<Tensor> second_moment_;
};

}  // namespace hmc
