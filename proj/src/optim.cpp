#include "hybrid/optim.hpp"

#include <cmath>

namespace hybrid {

AdamState::AdamState(const ParameterSet& params, AdamOptions opts) : options(opts) {
  for (const auto& p : params.items()) {
    first_moment.emplace_back(p.tensor.numel(), Real(0));
    second_moment.emplace_back(p.tensor.numel(), Real(0));
  }
}

void adam_step(ParameterSet& params, AdamState& state) {
  const auto& items = params.items();
  if (items.size() != state.first_moment.size()) {
    throw ContractError("Adam state tracks " + std::to_string(state.first_moment.size()) + " parameters, set has " +
                        std::to_string(items.size()));
  }
  for (const auto& p : items) {
    if (!p.tensor.has_grad()) throw ContractError("parameter '" + p.name + "' has no gradient");
  }
  ++state.step;
  const auto& o = state.options;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(o.beta1, t);
  const double correction2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < items.size(); ++i) {
    Tensor param = items[i].tensor;
    auto values = param.data();
    auto grads = param.grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.size() != values.size()) throw ContractError("Adam moment shape mismatch for '" + items[i].name + "'");
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grads[j];
      const double mj = o.beta1 * m[j] + (1.0 - o.beta1) * g;
      const double vj = o.beta2 * v[j] + (1.0 - o.beta2) * g * g;
      m[j] = static_cast<Real>(mj);
      v[j] = static_cast<Real>(vj);
      const double update = o.learning_rate * (mj / correction1) / (std::sqrt(vj / correction2) + o.epsilon);
      values[j] = static_cast<Real>(values[j] - update);
    }
  }
}

}  // namespace hybrid
