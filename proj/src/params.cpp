#include "hybrid/params.hpp"

#include <cmath>

namespace hybrid {

Tensor ParameterSet::add(std::string name, Tensor tensor) {
  if (find(name)) throw ContractError("duplicate parameter name '" + name + "'");
  tensor.set_requires_grad(true);
  items_.push_back({std::move(name), tensor});
  return tensor;
}

Tensor ParameterSet::zeros(std::string name, Shape shape) { return add(std::move(name), Tensor::zeros(std::move(shape))); }

Tensor ParameterSet::constant(std::string name, Shape shape, Real value) {
  return add(std::move(name), Tensor::full(std::move(shape), value));
}

Tensor ParameterSet::uniform(std::string name, Shape shape, Rng& rng) {
  const std::size_t fan_in = shape.empty() ? 1 : shape.front();
  return uniform(std::move(name), std::move(shape), Real(1) / std::sqrt(Real(fan_in)), rng);
}

Tensor ParameterSet::uniform(std::string name, Shape shape, Real bound, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data()) v = static_cast<Real>(rng.uniform(-bound, bound));
  return add(std::move(name), t);
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.tensor.numel();
  return n;
}

const Tensor* ParameterSet::find(const std::string& name) const {
  for (const auto& p : items_)
    if (p.name == name) return &p.tensor;
  return nullptr;
}

void ParameterSet::zero_grad() {
  for (auto& p : items_) p.tensor.zero_grad();
}

void ParameterSet::clear_grad() {
  for (auto& p : items_) p.tensor.clear_grad();
}

double ParameterSet::grad_norm() const {
  double sq = 0;
  for (const auto& p : items_)
    for (Real g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(sq);
}

double ParameterSet::clip_grad_norm(double max_norm) {
  const double norm = grad_norm();
  if (norm > max_norm && norm > 0) {
    const Real factor = static_cast<Real>(max_norm / norm);
    for (auto& p : items_)
      if (p.tensor.has_grad())
        for (auto& g : p.tensor.mutable_grad()) g *= factor;
  }
  return norm;
}

std::vector<std::vector<Real>> ParameterSet::snapshot() const {
  std::vector<std::vector<Real>> out;
  out.reserve(items_.size());
  for (const auto& p : items_) out.push_back(p.tensor.values());
  return out;
}

void ParameterSet::restore(const std::vector<std::vector<Real>>& values) {
  if (values.size() != items_.size()) throw ContractError("snapshot does not match parameter set");
  for (std::size_t i = 0; i < items_.size(); ++i) {
    auto dst = items_[i].tensor.data();
    if (values[i].size() != dst.size()) throw ContractError("snapshot size mismatch for " + items_[i].name);
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

}  // namespace hybrid
