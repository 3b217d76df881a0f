#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hmc/tensor.hpp"

namespace hmc {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// A trainable tensor plus its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad = Tensor(value.shape()); }
  std::size_t size() const { return value.size(); }
};

/// Receives the output gradient and accumulates into each input's gradient.
/// Entries of `grad_in` are null for inputs that do not require a gradient.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

class Gradients {
 public:
  Gradients(std::vector<Tensor> grads, std::vector<Shape> shapes)
      : grads_(std::move(grads)), shapes_(std::move(shapes)) {}

  /// Gradient with respect to `v`; zeros when `v` did not influence the loss.
  Tensor of(Var v) const {
    const Tensor* g = find(v.id);
    return g ? *g : Tensor(shapes_.at(v.id));
  }

  const Tensor* find(std::size_t id) const {
    if (id >= grads_.size() || grads_[id].empty()) return nullptr;
    return &grads_[id];
  }

 private:
  std::vector<Tensor> grads_;
  std::vector<Shape> shapes_;
};

/// Records operations in execution order; replays them in reverse to
/// compute gradients. Single-threaded while recording.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), nullptr, {}, false, nullptr); }

  Var leaf(Tensor value, bool requires_grad = true) {
    return push(std::move(value), nullptr, {}, requires_grad, nullptr);
  }

  /// Leaf aliasing a parameter's storage; the parameter must outlive the tape.
  Var param(Parameter& p) {
    Var v = push(Tensor{}, &p.value, {}, true, nullptr);
    bindings_.push_back({&p, v.id});
    return v;
  }

  /// Appends an op node. The backward rule is dropped when no input needs a
  /// gradient, so constant subgraphs cost nothing on the reverse pass.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    std::vector<std::size_t> ids;
    bool needs = false;
    for (Var in : inputs) {
      if (in.tape != this) throw ContractError("operands recorded on different tapes");
      ids.push_back(in.id);
      needs = needs || nodes_[in.id].requires_grad;
    }
    if (!value.all_finite()) {
      throw ContractError("non-finite value produced by recorded op (node " +
                          std::to_string(nodes_.size()) + ")");
    }
    return push(std::move(value), nullptr, std::move(ids), needs, needs ? std::move(backward) : nullptr);
  }

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.external ? *n.external : n.value;
  }

  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse pass from a scalar loss. Each node is visited once, in reverse
  /// recording order, which is a valid reverse topological order.
  Gradients backward(Var loss) const {
    if (loss.tape != this) throw ContractError("loss was recorded on a different tape");
    const Tensor& lv = value(loss.id);
    if (lv.size() != 1) {
      throw ContractError("backward requires a scalar loss, got shape " + to_string(lv.shape()));
    }
    std::vector<Tensor> grads(nodes_.size());
    grads[loss.id] = Tensor(lv.shape(), 1.0);
    std::vector<Tensor*> sinks;
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      const Node& n = nodes_[id];
      if (!n.backward || grads[id].empty()) continue;
      sinks.assign(n.inputs.size(), nullptr);
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        const std::size_t in = n.inputs[i];
        if (!nodes_[in].requires_grad) continue;
        if (grads[in].empty()) grads[in] = Tensor(value(in).shape());
        sinks[i] = &grads[in];
      }
      n.backward(grads[id], sinks);
    }
    std::vector<Shape> shapes;
    shapes.reserve(nodes_.size());
    for (std::size_t id = 0; id < nodes_.size(); ++id) shapes.push_back(value(id).shape());
    return Gradients(std::move(grads), std::move(shapes));
  }

  /// Adds each bound parameter's gradient into Parameter::grad.
  void accumulate_parameter_grads(const Gradients& grads) const {
    for (const auto& b : bindings_) {
      if (const Tensor* g = grads.find(b.id)) b.param->grad += *g;
    }
  }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    std::vector<std::size_t> inputs;
    bool requires_grad = false;
    BackwardFn backward;
  };

  struct Binding {
    Parameter* param;
    std::size_t id;
  };

  Var push(Tensor value, const Tensor* external, std::vector<std::size_t> inputs, bool requires_grad,
           BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), external, std::move(inputs), requires_grad, std::move(backward)});
    return Var{this, nodes_.size() - 1};
  }

  // deque keeps node addresses stable, so backward closures may hold
  // references to input values.
  std::deque<Node> nodes_;
  std::vector<Binding> bindings_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

}  // namespace hmc
