#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "crseg/numerics/tensor.hpp"

namespace crseg::numerics {

template <typename T>
class BasicTape;

/// Handle to a node recorded on a tape.
template <typename T>
struct BasicVar {
  BasicTape<T>* tape = nullptr;
  std::size_t id = 0;

  const BasicTensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const { return tape->requires_grad(id); }
};

/**
 * Linear record of tensor operations for reverse-mode differentiation.
 *
 * Nodes are appended in evaluation order, so the recorded order is already a
 * topological order and backward() replays it from the end. Leaves bound
 * through watch() alias an external parameter tensor; their gradients are
 * added into that tensor's grad buffer, so repeated backward() calls
 * accumulate until the caller zeroes them. A tape is single-threaded.
 */
template <typename T>
class BasicTape {
 public:
  using Var = BasicVar<T>;
  using BackwardFn = std::function<void(BasicTape&, std::size_t)>;

  BasicTape() = default;
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  /// Binds a parameter tensor. The tensor must outlive the tape.
  Var watch(BasicTensor<T>& param) {
    Node node;
    node.value = param;
    node.value.set_requires_grad(false);
    node.needs_grad = param.requires_grad();
    node.leaf = param.requires_grad() ? &param : nullptr;
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
  }

  Var constant(BasicTensor<T> value) {
    Node node;
    node.value = std::move(value);
    node.value.set_requires_grad(false);
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
  }

  /// Appends the result of an operation. `fn` runs during backward only when
  /// the output is connected to a differentiable input.
  Var record(BasicTensor<T> value, std::string_view op, bool needs_grad, BackwardFn fn) {
    if (!value.all_finite()) {
      throw NumericalError("non-finite value produced by " + std::string(op) + " (node " +
                           std::to_string(nodes_.size()) + ")");
    }
    Node node;
    node.value = std::move(value);
    node.needs_grad = needs_grad;
    if (needs_grad) node.backward = std::move(fn);
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
  }

  const BasicTensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient buffer of a node, allocated on first use.
  std::vector<T>& grad(std::size_t id) {
    auto& node = nodes_[id];
    if (node.grad.size() != node.value.size()) node.grad.assign(node.value.size(), T(0));
    return node.grad;
  }

  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

  /// Gradient of the last backward() with respect to an intermediate node.
  std::vector<T> gradient_of(Var v) const {
    const auto& node = nodes_.at(v.id);
    if (node.grad.empty()) return std::vector<T>(node.value.size(), T(0));
    return node.grad;
  }

  void backward(Var loss) {
    if (loss.tape != this) throw std::invalid_argument("loss belongs to a different tape");
    if (value(loss.id).size() != 1) {
      throw ShapeError("backward() needs a scalar loss, got shape " + to_string(value(loss.id).shape()));
    }
    for (auto& node : nodes_) node.grad.clear();
    if (!nodes_[loss.id].needs_grad) return;
    grad(loss.id)[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& node = nodes_[i];
      if (node.grad.empty() || !node.needs_grad) continue;
      if (node.backward) node.backward(*this, i);
      if (node.leaf != nullptr) {
        auto g = node.leaf->grad();
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += node.grad[k];
      }
    }
  }

 private:
  struct Node {
    BasicTensor<T> value;
    std::vector<T> grad;
    BackwardFn backward;
    BasicTensor<T>* leaf = nullptr;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
};

using Tape = BasicTape<double>;
using Var = BasicVar<double>;

}  // namespace crseg::numerics
