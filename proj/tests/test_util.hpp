#pragma once

#include <cmath>
#include <vector>

#include "hybrid/rng.hpp"
#include "hybrid/tensor.hpp"

namespace hybrid::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data()) v = static_cast<Real>(rng.uniform(lo, hi));
  return t;
}

inline double max_abs_diff(std::span<const Real> a, std::span<const Real> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return a.size() == b.size() ? m : INFINITY;
}

}  // namespace hybrid::test
