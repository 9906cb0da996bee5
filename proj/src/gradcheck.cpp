#include "hybrid/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "hybrid/ops.hpp"

namespace hybrid {

double GradCheckReport::worst_relative_error() const {
  double w = 0;
  for (const auto& p : parameters) w = std::max(w, p.relative_error);
  return w;
}

const ParameterCheck* GradCheckReport::worst() const {
  const ParameterCheck* w = nullptr;
  for (const auto& p : parameters)
    if (!w || p.relative_error > w->relative_error) w = &p;
  return w;
}

GradCheckReport gradient_check(std::span<const NamedParameter> params, const std::function<Tensor()>& loss_fn,
                               double tolerance, double step) {
  if (!kDoublePrecision) throw ContractError("gradient_check requires the 64-bit build");
  GradCheckReport report;
  auto& tape = GradTape::current();
  tape.clear();
  for (const auto& p : params) Tensor(p.tensor).zero_grad();

  const Tensor loss = loss_fn();
  if (!std::isfinite(loss.item())) {
    report.failure = "non-finite loss before perturbation";
    tape.clear();
    return report;
  }
  tape.backward(loss);
  tape.clear();

  std::vector<std::vector<Real>> analytic;
  for (const auto& p : params) analytic.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());

  NoGradGuard no_grad;
  report.passed = true;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor t = params[pi].tensor;
    ParameterCheck check{params[pi].name};
    auto values = t.data();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const Real original = values[j];
      values[j] = original + step;
      const double plus = loss_fn().item();
      values[j] = original - step;
      const double minus = loss_fn().item();
      values[j] = original;
      const double fd = (plus - minus) / (2 * step);
      const double ad = analytic[pi].empty() ? 0.0 : static_cast<double>(analytic[pi][j]);
      if (!std::isfinite(fd) || !std::isfinite(ad)) {
        report.failure = "non-finite gradient in parameter '" + params[pi].name + "'";
        report.passed = false;
        report.parameters.push_back(check);
        return report;
      }
      check.max_abs_error = std::max(check.max_abs_error, std::abs(ad - fd));
      check.max_magnitude = std::max({check.max_magnitude, std::abs(ad), std::abs(fd)});
    }
    check.relative_error = check.max_abs_error / std::max(check.max_magnitude, 1e-8);
    check.passed = check.relative_error <= tolerance;
    report.passed = report.passed && check.passed;
    report.parameters.push_back(check);
  }
  return report;
}

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data()) v = static_cast<Real>(rng.uniform(lo, hi));
  return t;
}

// Values bounded away from 0 so relu's kink is never straddled.
Tensor away_from_zero(Shape shape, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data()) v = static_cast<Real>((rng.bernoulli(0.5) ? 1 : -1) * rng.uniform(0.1, 1.0));
  return t;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

struct Instance {
  std::vector<NamedParameter> inputs;
  std::function<Tensor()> loss;
};

// Projects an operation's output onto a fixed random direction so every
// output element contributes a distinct weight to the scalar loss.
std::function<Tensor()> project(std::function<Tensor()> f, Shape out_shape, Rng& rng) {
  Tensor w = random_tensor(std::move(out_shape), rng);
  return [f = std::move(f), w] { return sum(mul(f(), w)); };
}

SequenceLayout random_layout(Rng& rng, std::size_t batch, std::size_t length) {
  SequenceLayout layout{batch, length, {}};
  for (std::size_t b = 0; b < batch; ++b) layout.lengths.push_back(pick(rng, 1, length));
  layout.lengths[rng.below(batch)] = length;
  return layout;
}

using Builder = std::function<Instance(Rng&)>;

const std::map<std::string, Builder>& builders() {
  static const std::map<std::string, Builder> table = {
      {"matmul",
       [](Rng& rng) {
         const std::size_t m = pick(rng, 1, 4), k = pick(rng, 1, 5), n = pick(rng, 1, 4);
         Tensor a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
         return Instance{{{"a", a}, {"b", b}}, project([a, b] { return matmul(a, b); }, {m, n}, rng)};
       }},
      {"transpose",
       [](Rng& rng) {
         const std::size_t m = pick(rng, 1, 4), n = pick(rng, 1, 4);
         Tensor a = random_tensor({m, n}, rng);
         return Instance{{{"a", a}}, project([a] { return transpose(a); }, {n, m}, rng)};
       }},
      {"add",
       [](Rng& rng) {
         Shape s{pick(rng, 1, 3), pick(rng, 1, 4)};
         Tensor a = random_tensor(s, rng), b = random_tensor(s, rng);
         return Instance{{{"a", a}, {"b", b}}, project([a, b] { return add(a, b); }, s, rng)};
       }},
      {"sub",
       [](Rng& rng) {
         Shape s{pick(rng, 1, 3), pick(rng, 1, 4)};
         Tensor a = random_tensor(s, rng), b = random_tensor(s, rng);
         return Instance{{{"a", a}, {"b", b}}, project([a, b] { return sub(a, b); }, s, rng)};
       }},
      {"mul",
       [](Rng& rng) {
         Shape s{pick(rng, 1, 3), pick(rng, 1, 4)};
         Tensor a = random_tensor(s, rng), b = random_tensor(s, rng);
         return Instance{{{"a", a}, {"b", b}}, project([a, b] { return mul(a, b); }, s, rng)};
       }},
      {"add_bias",
       [](Rng& rng) {
         Shape s{pick(rng, 1, 4), pick(rng, 1, 4)};
         Tensor x = random_tensor(s, rng), b = random_tensor({s[1]}, rng);
         return Instance{{{"x", x}, {"bias", b}}, project([x, b] { return add_bias(x, b); }, s, rng)};
       }},
      {"sigmoid",
       [](Rng& rng) {
         Shape s{pick(rng, 1, 3), pick(rng, 1, 5)};
         Tensor x = random_tensor(s, rng, -3, 3);
         return Instance{{{"x", x}}, project([x] { return sigmoid(x); }, s, rng)};
       }},
      {"tanh",
       [](Rng& rng) {
         Shape s{pick(rng, 1, 3), pick(rng, 1, 5)};
         Tensor x = random_tensor(s, rng, -2, 2);
         return Instance{{{"x", x}}, project([x] { return tanh(x); }, s, rng)};
       }},
      {"relu",
       [](Rng& rng) {
         Shape s{pick(rng, 1, 3), pick(rng, 1, 5)};
         Tensor x = away_from_zero(s, rng);
         return Instance{{{"x", x}}, project([x] { return relu(x); }, s, rng)};
       }},
      {"affine",
       [](Rng& rng) {
         Shape s{pick(rng, 1, 3), pick(rng, 1, 5)};
         Tensor x = random_tensor(s, rng);
         const Real alpha = static_cast<Real>(rng.uniform(-2, 2)), beta = static_cast<Real>(rng.uniform(-1, 1));
         return Instance{{{"x", x}}, project([x, alpha, beta] { return affine(x, alpha, beta); }, s, rng)};
       }},
      {"sum",
       [](Rng& rng) {
         Tensor x = random_tensor({pick(rng, 1, 3), pick(rng, 1, 5)}, rng);
         return Instance{{{"x", x}}, project([x] { return sum(x); }, {1}, rng)};
       }},
      {"softmax_rows",
       [](Rng& rng) {
         Shape s{pick(rng, 1, 3), pick(rng, 1, 6)};
         Tensor x = random_tensor(s, rng, -2, 2);
         return Instance{{{"x", x}}, project([x] { return softmax_rows(x); }, s, rng)};
       }},
      {"cumsum_last",
       [](Rng& rng) {
         Shape s{pick(rng, 1, 3), pick(rng, 1, 6)};
         Tensor x = random_tensor(s, rng);
         return Instance{{{"x", x}}, project([x] { return cumsum_last(x); }, s, rng)};
       }},
      {"reverse_last",
       [](Rng& rng) {
         Shape s{pick(rng, 1, 3), pick(rng, 1, 6)};
         Tensor x = random_tensor(s, rng);
         return Instance{{{"x", x}}, project([x] { return reverse_last(x); }, s, rng)};
       }},
      {"layer_norm",
       [](Rng& rng) {
         Shape s{pick(rng, 1, 3), pick(rng, 2, 6)};
         Tensor x = random_tensor(s, rng, -2, 2), g = random_tensor({s[1]}, rng, 0.5, 1.5),
                b = random_tensor({s[1]}, rng);
         return Instance{{{"x", x}, {"gain", g}, {"bias", b}},
                         project([x, g, b] { return layer_norm(x, g, b); }, s, rng)};
       }},
      {"dropout",
       [](Rng& rng) {
         Shape s{pick(rng, 1, 3), pick(rng, 1, 6)};
         Tensor x = random_tensor(s, rng);
         const std::uint64_t seed = rng.next_u64();
         return Instance{{{"x", x}}, project(
                                         [x, seed] {
                                           Rng mask_rng(seed);
                                           return dropout(x, 0.3, true, mask_rng);
                                         },
                                         s, rng)};
       }},
      {"cross_entropy",
       [](Rng& rng) {
         const std::size_t b = pick(rng, 1, 4), c = pick(rng, 2, 7);
         Tensor x = random_tensor({b, c}, rng, -2, 2);
         std::vector<int> labels(b);
         for (auto& l : labels) l = static_cast<int>(rng.below(c));
         return Instance{{{"logits", x}}, [x, labels] { return cross_entropy(x, labels); }};
       }},
      {"reshape",
       [](Rng& rng) {
         const std::size_t m = pick(rng, 1, 3), n = pick(rng, 1, 4);
         Tensor x = random_tensor({m, n}, rng);
         return Instance{{{"x", x}}, project([x, m, n] { return reshape(x, {n, m}); }, {n, m}, rng)};
       }},
      {"concat_cols",
       [](Rng& rng) {
         const std::size_t r = pick(rng, 1, 3), c1 = pick(rng, 1, 3), c2 = pick(rng, 1, 3);
         Tensor a = random_tensor({r, c1}, rng), b = random_tensor({r, c2}, rng);
         return Instance{{{"a", a}, {"b", b}}, project(
                                                   [a, b] {
                                                     std::vector<Tensor> parts{a, b, a};
                                                     return concat_cols(parts);
                                                   },
                                                   {r, 2 * c1 + c2}, rng)};
       }},
      {"slice_cols",
       [](Rng& rng) {
         const std::size_t r = pick(rng, 1, 3), c = pick(rng, 2, 6);
         const std::size_t begin = rng.below(c), count = pick(rng, 1, c - begin);
         Tensor x = random_tensor({r, c}, rng);
         return Instance{{{"x", x}}, project([x, begin, count] { return slice_cols(x, begin, count); }, {r, count}, rng)};
       }},
      {"gather_rows",
       [](Rng& rng) {
         const std::size_t r = pick(rng, 1, 4), c = pick(rng, 1, 4), n = pick(rng, 1, 6);
         Tensor x = random_tensor({r, c}, rng);
         std::vector<std::size_t> idx(n);
         for (auto& i : idx) i = rng.below(r);
         return Instance{{{"table", x}}, project([x, idx] { return gather_rows(x, idx); }, {n, c}, rng)};
       }},
      {"repeat_cols",
       [](Rng& rng) {
         const std::size_t r = pick(rng, 1, 3), c = pick(rng, 1, 4), times = pick(rng, 1, 3);
         Tensor x = random_tensor({r, c}, rng);
         return Instance{{{"x", x}}, project([x, times] { return repeat_cols(x, times); }, {r, c * times}, rng)};
       }},
      {"blend_rows",
       [](Rng& rng) {
         Shape s{pick(rng, 1, 4), pick(rng, 1, 4)};
         Tensor a = random_tensor(s, rng), b = random_tensor(s, rng);
         std::vector<Real> mask(s[0]);
         for (auto& m : mask) m = rng.bernoulli(0.5) ? Real(1) : Real(0);
         return Instance{{{"a", a}, {"b", b}}, project([a, b, mask] { return blend_rows(a, b, mask); }, s, rng)};
       }},
      {"interleave_steps",
       [](Rng& rng) {
         const std::size_t batch = pick(rng, 1, 3), d = pick(rng, 1, 3), n = pick(rng, 1, 4);
         std::vector<NamedParameter> inputs;
         std::vector<Tensor> steps;
         for (std::size_t t = 0; t < n; ++t) {
           steps.push_back(random_tensor({batch, d}, rng));
           inputs.push_back({"step" + std::to_string(t), steps.back()});
         }
         return Instance{inputs, project([steps] { return interleave_steps(steps); }, {batch * n, d}, rng)};
       }},
      {"step_rows",
       [](Rng& rng) {
         const std::size_t batch = pick(rng, 1, 3), d = pick(rng, 1, 3), n = pick(rng, 1, 4), t = rng.below(n);
         Tensor x = random_tensor({batch * n, d}, rng);
         return Instance{{{"x", x}}, project([x, batch, n, t] { return step_rows(x, batch, n, t); }, {batch, d}, rng)};
       }},
      {"masked_attention",
       [](Rng& rng) {
         const std::size_t heads = pick(rng, 1, 2), dk = pick(rng, 1, 3) * heads, dv = pick(rng, 1, 2) * heads;
         const SequenceLayout layout = random_layout(rng, pick(rng, 1, 3), pick(rng, 1, 4));
         const std::size_t rows = layout.rows();
         Tensor q = random_tensor({rows, dk}, rng), k = random_tensor({rows, dk}, rng), v = random_tensor({rows, dv}, rng);
         return Instance{{{"q", q}, {"k", k}, {"v", v}},
                         project([q, k, v, layout, heads] { return masked_attention(q, k, v, layout, heads); },
                                 {rows, dv}, rng)};
       }},
      {"attention_pool",
       [](Rng& rng) {
         const std::size_t d = pick(rng, 1, 4), nq = pick(rng, 1, 2);
         const SequenceLayout layout = random_layout(rng, pick(rng, 1, 3), pick(rng, 1, 4));
         Tensor queries = random_tensor({nq, d}, rng), x = random_tensor({layout.rows(), d}, rng);
         return Instance{{{"queries", queries}, {"x", x}},
                         project([queries, x, layout] { return attention_pool(queries, x, layout); },
                                 {layout.batch, nq * d}, rng)};
       }},
  };
  return table;
}

}  // namespace

const std::vector<std::string>& checked_operations() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, _] : builders()) out.push_back(name);
    return out;
  }();
  return names;
}

OperationCheck check_operation(const std::string& op, Rng& rng, int trials, double tolerance) {
  const auto it = builders().find(op);
  if (it == builders().end()) throw ContractError("no gradient check registered for op '" + op + "'");
  OperationCheck result{op, 0, 0, true, ""};
  for (int trial = 0; trial < trials; ++trial) {
    Instance inst = it->second(rng);
    for (auto& p : inst.inputs) p.tensor.set_requires_grad(true);
    const GradCheckReport report = gradient_check(inst.inputs, inst.loss, tolerance);
    ++result.trials;
    result.worst_relative_error = std::max(result.worst_relative_error, report.worst_relative_error());
    if (!report.passed) {
      result.passed = false;
      result.failure = report.failure.empty() ? "gradient mismatch on trial " + std::to_string(trial) : report.failure;
      break;
    }
  }
  return result;
}

}  // namespace hybrid
