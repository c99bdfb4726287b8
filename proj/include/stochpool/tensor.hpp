// Dense rank-2 tensors with an optional reverse-mode gradient tape.
//
// A Tensor is a cheap handle onto an immutable node. Nodes created by ops
// whose inputs are all constants carry no tape and cost nothing beyond the
// Eigen computation; as soon as one input lives on a Tape the result is
// recorded there together with a closure that propagates its gradient.
#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace stochpool {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// Raised for any shape disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for invalid operator parameters (stride, kernel, factor...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for misuse of the tape (non-scalar loss, mixed tapes, reuse).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <typename Scalar>
class Tape;

namespace detail {

template <typename Scalar>
struct Node {
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  Tape<Scalar>* tape = nullptr;
  std::function<void(Node&)> backward;

  void accumulate(const Matrix<Scalar>& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

}  // namespace detail

template <typename Scalar>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<detail::Node<Scalar>>;

  Tensor() : node_(std::make_shared<detail::Node<Scalar>>()) {}
  explicit Tensor(Matrix<Scalar> value) : Tensor() { node_->value = std::move(value); }
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor scalar(Scalar v) {
    Matrix<Scalar> m(1, 1);
    m(0, 0) = v;
    return Tensor(std::move(m));
  }

  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  Eigen::Index size() const { return node_->value.size(); }
  std::vector<Eigen::Index> shape() const { return {rows(), cols()}; }

  const Matrix<Scalar>& value() const { return node_->value; }
  Scalar item() const {
    if (size() != 1) throw UsageError("item() on tensor of shape " + shape_string());
    return node_->value(0, 0);
  }

  /// Gradient accumulated by the last backward pass (zeros if none flowed here).
  Matrix<Scalar> grad() const {
    if (node_->grad.size() == 0) return Matrix<Scalar>::Zero(rows(), cols());
    return node_->grad;
  }

  bool requires_grad() const { return node_->tape != nullptr; }
  Tape<Scalar>* tape() const { return node_->tape; }
  const NodePtr& node() const { return node_; }

  std::string shape_string() const {
    return "[" + std::to_string(rows()) + "x" + std::to_string(cols()) + "]";
  }

 private:
  NodePtr node_;
};

/// Ordered record of executed differentiable operations.
///
/// backward() replays the record in exact reverse order and then clears it;
/// a tape is reusable afterwards but the consumed graph is gone.
template <typename Scalar>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A leaf whose gradient is wanted.
  Tensor<Scalar> variable(Matrix<Scalar> value) {
    auto node = std::make_shared<detail::Node<Scalar>>();
    node->value = std::move(value);
    node->tape = this;
    return Tensor<Scalar>(std::move(node));
  }

  void record(const typename Tensor<Scalar>::NodePtr& node) { ops_.push_back(node); }
  std::size_t size() const { return ops_.size(); }

  void backward(const Tensor<Scalar>& loss) {
    if (loss.size() != 1) {
      throw UsageError("backward() needs a scalar loss, got " + loss.shape_string());
    }
    if (loss.tape() != this) throw UsageError("loss was not produced on this tape");
    loss.node()->accumulate(Matrix<Scalar>::Ones(1, 1));
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
      auto& node = **it;
      if (node.grad.size() != 0 && node.backward) node.backward(node);
    }
    for (auto& node : ops_) node->backward = nullptr;
    ops_.clear();
  }

 private:
  std::vector<typename Tensor<Scalar>::NodePtr> ops_;
};

namespace detail {

template <typename Scalar>
Tape<Scalar>* common_tape(std::initializer_list<const Tensor<Scalar>*> inputs) {
  Tape<Scalar>* tape = nullptr;
  for (const auto* t : inputs) {
    if (t->tape() == nullptr) continue;
    if (tape != nullptr && tape != t->tape()) throw UsageError("operands live on different tapes");
    tape = t->tape();
  }
  return tape;
}

/// Wrap a freshly computed value; when any input is on a tape the result is
/// recorded with `backward` which receives the output node (grad filled in).
template <typename Scalar, typename Backward>
Tensor<Scalar> make_result(Matrix<Scalar> value,
                           std::initializer_list<const Tensor<Scalar>*> inputs,
                           Backward&& backward) {
  auto node = std::make_shared<Node<Scalar>>();
  node->value = std::move(value);
  if (Tape<Scalar>* tape = common_tape<Scalar>(inputs)) {
    node->tape = tape;
    node->backward = std::forward<Backward>(backward);
    tape->record(node);
  }
  return Tensor<Scalar>(std::move(node));
}

template <typename Scalar>
void push_grad(const Tensor<Scalar>& t, const Matrix<Scalar>& g) {
  if (t.requires_grad()) t.node()->accumulate(g);
}

}  // namespace detail

}  // namespace stochpool
