#pragma once

#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "hybrid/gradcheck.hpp"
#include "hybrid/model.hpp"

namespace hybrid {

struct GradcheckCase {
  std::string label;  // e.g. "hybrid K=1 L=2"
  ModelConfig model;
};

/// Tiny end-to-end models: every encoder kind over a few depths, width 8.
std::vector<GradcheckCase> gradcheck_matrix();

struct GradcheckCaseResult {
  GradcheckCase config;
  GradCheckReport report;
};

/// Checks the pair-classification loss of each case on a fixed batch of
/// random pairs. Needs the 64-bit build.
std::vector<GradcheckCaseResult> run_gradcheck_matrix(double tolerance, std::uint64_t seed);

/// Human-readable report: one block per case, worst relative error per parameter.
std::string format_gradcheck_report(std::span<const GradcheckCaseResult> results, double tolerance);

/// Master-gate CSV (header included) for each expression, encoded alone.
/// Throws ConfigError if the model has no ON-LSTM stage.
void trace_gates(const PairModel& model, std::span<const std::string> expressions, std::ostream& csv);

}  // namespace hybrid
