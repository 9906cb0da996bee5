#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hybrid/params.hpp"

namespace hybrid {

struct ParameterCheck {
  std::string name;
  double max_abs_error = 0;  // max |g_ad - g_fd| over elements
  double max_magnitude = 0;  // max(|g_ad|, |g_fd|) over elements
  double relative_error = 0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<ParameterCheck> parameters;
  bool passed = false;
  std::string failure;  // set when a non-finite value aborted the check

  double worst_relative_error() const;
  const ParameterCheck* worst() const;
};

/// Compares reverse-mode gradients with central finite differences.
///
/// Per parameter tensor the relative error is
///   max|g_ad - g_fd| / max(max|g_ad|, max|g_fd|, 1e-8)
/// and the check passes iff every parameter is within `tolerance`.
/// Requires the 64-bit build; the loss function must be deterministic.
GradCheckReport gradient_check(std::span<const NamedParameter> params, const std::function<Tensor()>& loss_fn,
                               double tolerance, double step = 1e-5);

struct OperationCheck {
  std::string op;
  int trials = 0;
  double worst_relative_error = 0;
  bool passed = false;
  std::string failure;
};

/// Names of every differentiable primitive covered by check_operation.
const std::vector<std::string>& checked_operations();

/// Gradient-checks one primitive on `trials` randomly shaped instances.
OperationCheck check_operation(const std::string& op, Rng& rng, int trials, double tolerance);

}  // namespace hybrid
