#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hybrid/common.hpp"

namespace hybrid {

namespace detail {

struct Node {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  bool leaf = true;  // false once produced by a recorded operation
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

/// Dense row-major tensor. Copies share storage; use clone() for a deep copy.
///
/// Operations treat a tensor as a matrix of rows() x cols(), where cols() is
/// the last dimension and rows() is the product of the leading ones.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Real> values, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t cols() const { return node_->shape.empty() ? 1 : node_->shape.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : numel() / cols(); }

  std::span<Real> data() { return node_->data; }
  std::span<const Real> data() const { return node_->data; }
  const std::vector<Real>& values() const { return node_->data; }
  Real item() const;
  Real at(std::size_t i) const { return node_->data.at(i); }
  Real at(std::size_t r, std::size_t c) const { return node_->data.at(r * cols() + c); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool is_leaf() const { return node_->leaf; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const Real> grad() const { return node_->grad; }
  /// Gradient buffer, allocated and zero-filled on first access.
  std::span<Real> mutable_grad();
  void zero_grad();
  void clear_grad() { node_->grad.clear(); }

  /// Deep copy detached from any tape.
  Tensor clone() const;
  /// Detached copy with a different shape of equal size.
  Tensor reshaped(Shape shape) const;

  const detail::NodePtr& node() const { return node_; }
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

 private:
  detail::NodePtr node_;
};

/// Ordered record of differentiable operations for reverse-mode replay.
///
/// Each thread owns its own current tape. Entries are appended in execution
/// order, so replaying them backwards visits every output before its inputs.
class GradTape {
 public:
  struct Entry {
    std::string_view op;
    std::vector<detail::NodePtr> inputs;
    detail::NodePtr output;
    std::function<void()> backward;
  };

  static GradTape& current();

  void record(std::string_view op, std::vector<detail::NodePtr> inputs, detail::NodePtr output,
              std::function<void()> backward);
  void backward(const Tensor& loss);
  void clear() { entries_.clear(); }

  std::size_t size() const noexcept { return entries_.size(); }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  /// True when every entry's inputs are leaves or outputs of earlier entries.
  bool topologically_ordered() const;

 private:
  std::vector<Entry> entries_;
};

/// Gradient recording is enabled by default; this guard disables it for the
/// current thread while in scope.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Runs reverse-mode differentiation of a scalar loss over the current
/// thread's tape. Leaf gradients accumulate across calls.
void backward(const Tensor& loss);

namespace testing_hooks {
/// Negates the input gradients produced by every tape entry named `op`.
/// Empty string disables the fault. Used to prove that gradient checks catch
/// a wrong derivative.
void set_gradient_fault(std::string op);
const std::string& gradient_fault();
}  // namespace testing_hooks

}  // namespace hybrid
