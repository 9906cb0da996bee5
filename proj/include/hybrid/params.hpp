#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hybrid/rng.hpp"
#include "hybrid/tensor.hpp"

namespace hybrid {

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

/// Ordered registry of trainable tensors. Modules keep handles to the same
/// storage, so optimizer updates and checkpoint loads are seen everywhere.
class ParameterSet {
 public:
  Tensor add(std::string name, Tensor tensor);
  Tensor zeros(std::string name, Shape shape);
  Tensor constant(std::string name, Shape shape, Real value);
  /// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), fan_in being the first dimension
  Tensor uniform(std::string name, Shape shape, Rng& rng);
  Tensor uniform(std::string name, Shape shape, Real bound, Rng& rng);

  const std::vector<NamedParameter>& items() const noexcept { return items_; }
  std::size_t size() const noexcept { return items_.size(); }
  std::size_t scalar_count() const;
  const Tensor* find(const std::string& name) const;

  void zero_grad();
  void clear_grad();
  /// Global L2 norm of all gradients; missing gradients count as zero.
  double grad_norm() const;
  /// Rescales gradients so their global norm is at most max_norm. Returns the
  /// norm before clipping.
  double clip_grad_norm(double max_norm);

  /// Deep copy of every parameter value, in registration order.
  std::vector<std::vector<Real>> snapshot() const;
  void restore(const std::vector<std::vector<Real>>& values);

 private:
  std::vector<NamedParameter> items_;
};

}  // namespace hybrid
