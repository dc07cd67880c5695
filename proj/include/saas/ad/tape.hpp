#pragma once

// Reverse-mode automatic differentiation over row-major dense matrices.
//
// A Tape records every intermediate value of one forward pass together with a
// closure that scatters the node's gradient into its parents. Nodes are only
// appended, so node ids are a topological order and backward() walks them in
// reverse. Scalar type S is float for training and double for gradient checks.

#include "saas/core/types.hpp"

#include <deque>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace saas::ad {

template <class S>
using Mat = MatrixT<S>;

template <class S>
struct Parameter {
  std::string name;
  Mat<S> value;
  Mat<S> grad;
  bool frozen = false;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <class S>
class Tape;

template <class S>
class Var {
 public:
  Var() = default;
  Var(Tape<S>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<S>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Mat<S>& value() const { return tape_->value(id_); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  S item() const {
    if (rows() != 1 || cols() != 1) throw std::logic_error("Var::item on a non-scalar");
    return value()(0, 0);
  }

 private:
  Tape<S>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <class S>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<S> constant(Mat<S> value) { return push(std::move(value), false, nullptr); }

  /// Free leaf that receives a gradient; used by gradient checks and tests.
  Var<S> leaf(Mat<S> value) { return push(std::move(value), true, nullptr); }

  /// Bind a parameter once per tape. Frozen parameters enter as constants.
  Var<S> param(Parameter<S>& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return {this, it->second};
    Var<S> v = push(p.value, !p.frozen, nullptr);
    bound_.emplace(&p, v.id());
    if (!p.frozen) params_.emplace_back(v.id(), &p);
    return v;
  }

  Var<S> record(Mat<S> value, std::initializer_list<Var<S>> parents, BackwardFn fn) {
    return record(std::move(value), std::vector<Var<S>>(parents), std::move(fn));
  }

  Var<S> record(Mat<S> value, const std::vector<Var<S>>& parents, BackwardFn fn) {
    bool needs = false;
    for (const auto& p : parents) {
      if (&p.tape() != this) throw std::logic_error("Var from a different tape");
      needs = needs || nodes_[p.id()].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr);
  }

  const Mat<S>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool has_grad(std::size_t id) const { return nodes_[id].grad.size() > 0; }
  const Mat<S>& grad(std::size_t id) const { return nodes_[id].grad; }

  template <class Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Backpropagate d(root)/d(.) with seed 1; root must be 1x1. Parameter gradients
  /// are added to Parameter::grad.
  void backward(Var<S> root) {
    if (root.rows() != 1 || root.cols() != 1) throw std::logic_error("backward: root must be scalar");
    if (!nodes_[root.id()].requires_grad) return;
    nodes_[root.id()].grad = Mat<S>::Ones(1, 1);
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && n.grad.size() > 0) n.backward(*this, i);
    }
    for (auto& [id, p] : params_) {
      const Node& n = nodes_[id];
      if (n.grad.size() == 0) continue;
      if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols()) p->zero_grad();
      p->grad += n.grad;
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Mat<S> value;
    Mat<S> grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Var<S> push(Mat<S> value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Mat<S>(), std::move(fn), requires_grad});
    return {this, nodes_.size() - 1};
  }

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter<S>*, std::size_t> bound_;
  std::vector<std::pair<std::size_t, Parameter<S>*>> params_;
};

}  // namespace saas::ad
