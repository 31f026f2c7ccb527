// Copyright 2026 The Sandglasset Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "sandglasset/param_table.hpp"
#include "sandglasset/tensor.hpp"

namespace sandglasset {

template <typename Real>
class Tape;

// Handle to a value recorded on a Tape.
template <typename Real>
struct Var {
  Tape<Real>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<Real>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape->requires_grad(id); }
};

// Eager reverse-mode recorder. Every op computes its value immediately and,
// when any input needs a gradient, appends a closure that maps the output
// gradient to input gradients. Gradients of parameter leaves are flushed into
// the owning ParamTable at the end of backward().
template <typename Real>
class Tape {
 public:
  // Receives the tape and the id of the node whose gradient is propagated.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var<Real> constant(Tensor<Real> value) {
    nodes_.push_back(Node{std::move(value), {}, nullptr, nullptr, {}, false, ""});
    return {this, nodes_.size() - 1};
  }

  // Leaf that receives a gradient (readable through grad() after backward).
  Var<Real> variable(Tensor<Real> value) {
    nodes_.push_back(Node{std::move(value), {}, nullptr, nullptr, {}, record_, ""});
    return {this, nodes_.size() - 1};
  }

  // Leaf aliasing a ParamTable entry; the table must outlive the tape.
  Var<Real> param(Parameter<Real>& p) {
    nodes_.push_back(Node{{}, {}, &p.value, &p, {}, record_, ""});
    return {this, nodes_.size() - 1};
  }
  Var<Real> param(ParamTable<Real>& table, std::string_view path) {
    return param(table.get(path));
  }

  // Records an op result. `backward` is dropped when no input needs a
  // gradient or the tape is not recording.
  Var<Real> push(Tensor<Real> value, std::initializer_list<Var<Real>> inputs,
                 BackwardFn backward, const char* op) {
    bool needs = false;
    if (record_)
      for (const auto& in : inputs) needs = needs || requires_grad(in.id);
    nodes_.push_back(Node{std::move(value), {}, nullptr, nullptr,
                          needs ? std::move(backward) : BackwardFn{}, needs, op});
    return {this, nodes_.size() - 1};
  }
  Var<Real> push(Tensor<Real> value, const std::vector<Var<Real>>& inputs,
                 BackwardFn backward, const char* op) {
    bool needs = false;
    if (record_)
      for (const auto& in : inputs) needs = needs || requires_grad(in.id);
    nodes_.push_back(Node{std::move(value), {}, nullptr, nullptr,
                          needs ? std::move(backward) : BackwardFn{}, needs, op});
    return {this, nodes_.size() - 1};
  }

  const Tensor<Real>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Gradient buffer of a node, allocated as zeros on first access.
  Tensor<Real>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.shape() != value(id).shape()) n.grad = Tensor<Real>(value(id).shape());
    return n.grad;
  }
  Tensor<Real>& grad(Var<Real> v) { return grad(v.id); }
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

  // Seeds d(root)/d(root) = seed (root must be a scalar) and propagates.
  void backward(Var<Real> root, Real seed = Real(1)) {
    if (value(root.id).size() != 1)
      throw DimensionError("backward() root must be a scalar, got " +
                           shape_string(value(root.id).shape()));
    grad(root.id)[0] += seed;
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      if (!fault_op_.empty() && fault_op_ == n.op)
        for (auto& g : n.grad.storage()) g *= Real(1.25);
      n.backward(*this, i);
    }
    for (auto& n : nodes_) {
      if (n.param && !n.grad.empty()) add_into(n.param->grad, n.grad);
    }
  }

  // Test hook: scales the incoming gradient of every node recorded under
  // `op` during backward(), i.e. corrupts that op's backward rule.
  void inject_backward_fault(std::string op) { fault_op_ = std::move(op); }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;
    const Tensor<Real>* external;
    Parameter<Real>* param;
    BackwardFn backward;
    bool requires_grad;
    std::string op;
  };

  bool record_;
  std::deque<Node> nodes_;
  std::string fault_op_;
};

}  // namespace sandglasset
