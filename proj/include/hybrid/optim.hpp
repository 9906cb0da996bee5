#pragma once

#include <cstdint>
#include <vector>

#include "hybrid/params.hpp"

namespace hybrid {

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamOptions options;
  std::uint64_t step = 0;
  std::vector<std::vector<Real>> first_moment;
  std::vector<std::vector<Real>> second_moment;

  AdamState() = default;
  AdamState(const ParameterSet& params, AdamOptions opts);
};

/// One bias-corrected Adam update of every parameter from its gradient.
/// Throws ContractError if a parameter has no gradient buffer.
void adam_step(ParameterSet& params, AdamState& state);

}  // namespace hybrid
