#include "hybrid/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace hybrid {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0, requires_grad); }

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  auto node = std::make_shared<detail::Node>();
  node->data.assign(shape_numel(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<Real> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_to_string(shape) + " does not hold " + std::to_string(values.size()) +
                         " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(Real value, bool requires_grad) { return from({1}, {value}, requires_grad); }

Real Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_to_string(shape()));
  return node_->data[0];
}

std::span<Real> Tensor::mutable_grad() {
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0);
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.assign(node_->data.size(), 0); }

Tensor Tensor::clone() const {
  auto node = std::make_shared<detail::Node>();
  node->shape = node_->shape;
  node->data = node_->data;
  node->requires_grad = node_->requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw DimensionError("cannot view " + shape_to_string(this->shape()) + " as " + shape_to_string(shape));
  }
  Tensor view = clone();
  view.node_->shape = std::move(shape);
  return view;
}

namespace {

thread_local bool t_grad_enabled = true;
std::string g_gradient_fault;

}  // namespace

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

GradTape& GradTape::current() {
  thread_local GradTape tape;
  return tape;
}

void GradTape::record(std::string_view op, std::vector<detail::NodePtr> inputs, detail::NodePtr output,
                      std::function<void()> backward) {
  output->leaf = false;
  output->requires_grad = true;
  entries_.push_back(Entry{op, std::move(inputs), std::move(output), std::move(backward)});
}

bool GradTape::topologically_ordered() const {
  std::unordered_set<const detail::Node*> produced;
  for (const auto& e : entries_) {
    for (const auto& in : e.inputs) {
      if (!in->leaf && !produced.contains(in.get())) return false;
    }
    produced.insert(e.output.get());
  }
  return true;
}

void GradTape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? shape_to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) throw ContractError("backward() on a loss that is not on the tape");

  // Intermediate gradients restart from zero on each call; leaves accumulate.
  for (auto& e : entries_) e.output->grad.clear();
  auto& seed = loss.node()->grad;
  if (seed.empty()) seed.assign(1, 0);
  seed[0] += 1;

  const std::string& fault = g_gradient_fault;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    if (!fault.empty() && it->op == fault) {
      std::vector<std::vector<Real>> before;
      before.reserve(it->inputs.size());
      for (auto& in : it->inputs) {
        if (in->requires_grad && in->grad.empty()) in->grad.assign(in->data.size(), 0);
        before.push_back(in->grad);
      }
      it->backward();
      for (std::size_t i = 0; i < it->inputs.size(); ++i) {
        auto& g = it->inputs[i]->grad;
        for (std::size_t j = 0; j < g.size() && j < before[i].size(); ++j) g[j] = before[i][j] - (g[j] - before[i][j]);
      }
    } else {
      it->backward();
    }
  }
}

void backward(const Tensor& loss) { GradTape::current().backward(loss); }

namespace testing_hooks {
void set_gradient_fault(std::string op) { g_gradient_fault = std::move(op); }
const std::string& gradient_fault() { return g_gradient_fault; }
}  // namespace testing_hooks

}  // namespace hybrid
