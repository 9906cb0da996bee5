#include "hybrid/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hybrid/kernels.hpp"

namespace hybrid {

using detail::NodePtr;

bool SequenceLayout::padded() const {
  return std::any_of(lengths.begin(), lengths.end(), [&](std::size_t n) { return n != length; });
}

void SequenceLayout::validate() const {
  if (lengths.size() != batch) {
    throw DimensionError("layout lists " + std::to_string(lengths.size()) + " lengths for batch " +
                         std::to_string(batch));
  }
  for (std::size_t b = 0; b < batch; ++b) {
    if (lengths[b] == 0) throw DataError("sequence " + std::to_string(b) + " has length 0");
    if (lengths[b] > length) throw DimensionError("sequence length exceeds padded length");
  }
}

namespace {

constexpr long long kParallelElements = 1 << 15;

template <class F>
void for_each_index(std::size_t n, F&& f) {
  const long long count = static_cast<long long>(n);
#pragma omp parallel for schedule(static) if (count >= kParallelElements)
  for (long long i = 0; i < count; ++i) f(static_cast<std::size_t>(i));
}

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (!grad_enabled()) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

std::vector<Real>& grad_of(const NodePtr& node) {
  if (node->grad.empty()) node->grad.assign(node->data.size(), 0);
  return node->grad;
}

void record(std::string_view op, std::vector<NodePtr> inputs, const Tensor& out, std::function<void()> fn) {
  GradTape::current().record(op, std::move(inputs), out.node(), std::move(fn));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()) + " differ");
  }
}

void require_2d(const char* op, const Tensor& a) {
  if (a.ndim() != 2) throw DimensionError(std::string(op) + " expects a matrix, got " + shape_to_string(a.shape()));
}

Shape with_last(const Shape& shape, std::size_t last) {
  Shape out = shape;
  if (out.empty()) out.push_back(last);
  else out.back() = last;
  return out;
}

Tensor binary(ElementwiseOp op, const Tensor& a, const Tensor& b) {
  const char* name = op == ElementwiseOp::add ? "add" : op == ElementwiseOp::sub ? "sub" : "mul";
  require_same_shape(name, a, b);
  Tensor out = Tensor::zeros(a.shape());
  const Real* pa = a.data().data();
  const Real* pb = b.data().data();
  Real* po = out.data().data();
  switch (op) {
    case ElementwiseOp::add: for_each_index(out.numel(), [&](std::size_t i) { po[i] = pa[i] + pb[i]; }); break;
    case ElementwiseOp::sub: for_each_index(out.numel(), [&](std::size_t i) { po[i] = pa[i] - pb[i]; }); break;
    default: for_each_index(out.numel(), [&](std::size_t i) { po[i] = pa[i] * pb[i]; }); break;
  }
  if (tracking({&a, &b})) {
    NodePtr na = a.node(), nb = b.node(), no = out.node();
    record(name, {na, nb}, out, [op, na, nb, no] {
      const auto& go = no->grad;
      const std::size_t n = go.size();
      if (na->requires_grad) {
        auto& ga = grad_of(na);
        if (op == ElementwiseOp::mul) {
          for_each_index(n, [&](std::size_t i) { ga[i] += go[i] * nb->data[i]; });
        } else {
          for_each_index(n, [&](std::size_t i) { ga[i] += go[i]; });
        }
      }
      if (nb->requires_grad) {
        auto& gb = grad_of(nb);
        if (op == ElementwiseOp::mul) {
          for_each_index(n, [&](std::size_t i) { gb[i] += go[i] * na->data[i]; });
        } else if (op == ElementwiseOp::sub) {
          for_each_index(n, [&](std::size_t i) { gb[i] -= go[i]; });
        } else {
          for_each_index(n, [&](std::size_t i) { gb[i] += go[i]; });
        }
      }
    });
  }
  return out;
}

Real stable_sigmoid(Real x) {
  if (x >= 0) return Real(1) / (Real(1) + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real(1) + e);
}

Tensor unary(ElementwiseOp op, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const Real* px = x.data().data();
  Real* po = out.data().data();
  const char* name = "relu";
  switch (op) {
    case ElementwiseOp::sigmoid:
      name = "sigmoid";
      for_each_index(out.numel(), [&](std::size_t i) { po[i] = stable_sigmoid(px[i]); });
      break;
    case ElementwiseOp::tanh:
      name = "tanh";
      for_each_index(out.numel(), [&](std::size_t i) { po[i] = std::tanh(px[i]); });
      break;
    default:
      for_each_index(out.numel(), [&](std::size_t i) { po[i] = px[i] > 0 ? px[i] : Real(0); });
      break;
  }
  if (tracking({&x})) {
    NodePtr nx = x.node(), no = out.node();
    record(name, {nx}, out, [op, nx, no] {
      auto& gx = grad_of(nx);
      const auto& go = no->grad;
      const auto& y = no->data;
      switch (op) {
        case ElementwiseOp::sigmoid:
          for_each_index(go.size(), [&](std::size_t i) { gx[i] += go[i] * y[i] * (Real(1) - y[i]); });
          break;
        case ElementwiseOp::tanh:
          for_each_index(go.size(), [&](std::size_t i) { gx[i] += go[i] * (Real(1) - y[i] * y[i]); });
          break;
        default:
          for_each_index(go.size(), [&](std::size_t i) { gx[i] += nx->data[i] > 0 ? go[i] : Real(0); });
          break;
      }
    });
  }
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d("matmul", a);
  require_2d("matmul", b);
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions of " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()) + " disagree");
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  kernels::gemm_nn(m, n, k, a.data(), b.data(), out.data());
  if (tracking({&a, &b})) {
    NodePtr na = a.node(), nb = b.node(), no = out.node();
    record("matmul", {na, nb}, out, [na, nb, no, m, k, n] {
      if (na->requires_grad) kernels::gemm_nt(m, k, n, no->grad, nb->data, grad_of(na));
      if (nb->requires_grad) kernels::gemm_tn(k, n, m, na->data, no->grad, grad_of(nb));
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_2d("transpose", a);
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor out = Tensor::zeros({c, r});
  kernels::transpose(r, c, a.data(), out.data());
  if (tracking({&a})) {
    NodePtr na = a.node(), no = out.node();
    record("transpose", {na}, out, [na, no, r, c] {
      std::vector<Real> back(r * c);
      kernels::transpose(c, r, no->grad, back);
      kernels::axpy(1, back, grad_of(na));
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.numel() != x.cols()) {
    throw DimensionError("add_bias: bias " + shape_to_string(bias.shape()) + " does not broadcast over " +
                         shape_to_string(x.shape()));
  }
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor out = Tensor::zeros(x.shape());
  const Real* px = x.data().data();
  const Real* pb = bias.data().data();
  Real* po = out.data().data();
  for_each_index(rows, [&](std::size_t r) {
    for (std::size_t c = 0; c < cols; ++c) po[r * cols + c] = px[r * cols + c] + pb[c];
  });
  if (tracking({&x, &bias})) {
    NodePtr nx = x.node(), nb = bias.node(), no = out.node();
    record("add_bias", {nx, nb}, out, [nx, nb, no, rows, cols] {
      if (nx->requires_grad) kernels::axpy(1, no->grad, grad_of(nx));
      if (nb->requires_grad) {
        auto& gb = grad_of(nb);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) gb[c] += no->grad[r * cols + c];
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) { return add_bias(matmul(x, weight), bias); }

Tensor elementwise(ElementwiseOp op, std::span<const Tensor> operands) {
  const bool is_binary = op == ElementwiseOp::add || op == ElementwiseOp::sub || op == ElementwiseOp::mul;
  const std::size_t need = is_binary ? 2 : 1;
  if (operands.size() != need) {
    throw ContractError("elementwise op expects " + std::to_string(need) + " operands, got " +
                        std::to_string(operands.size()));
  }
  return is_binary ? binary(op, operands[0], operands[1]) : unary(op, operands[0]);
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(ElementwiseOp::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(ElementwiseOp::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(ElementwiseOp::mul, a, b); }
Tensor sigmoid(const Tensor& x) { return unary(ElementwiseOp::sigmoid, x); }
Tensor tanh(const Tensor& x) { return unary(ElementwiseOp::tanh, x); }
Tensor relu(const Tensor& x) { return unary(ElementwiseOp::relu, x); }

Tensor affine(const Tensor& x, Real alpha, Real beta) {
  Tensor out = Tensor::zeros(x.shape());
  const Real* px = x.data().data();
  Real* po = out.data().data();
  for_each_index(out.numel(), [&](std::size_t i) { po[i] = alpha * px[i] + beta; });
  if (tracking({&x})) {
    NodePtr nx = x.node(), no = out.node();
    record("affine", {nx}, out, [nx, no, alpha] { kernels::axpy(alpha, no->grad, grad_of(nx)); });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  Real total = 0;
  for (Real v : x.data()) total += v;
  Tensor out = Tensor::scalar(total);
  if (tracking({&x})) {
    NodePtr nx = x.node(), no = out.node();
    record("sum", {nx}, out, [nx, no] {
      auto& gx = grad_of(nx);
      const Real g = no->grad[0];
      for (auto& v : gx) v += g;
    });
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (cols == 0) throw DimensionError("softmax_rows: empty last dimension");
  Tensor out = Tensor::zeros(x.shape());
  const Real* px = x.data().data();
  Real* po = out.data().data();
  for_each_index(rows, [&](std::size_t r) {
    const Real* in = px + r * cols;
    Real* o = po + r * cols;
    const Real mx = *std::max_element(in, in + cols);
    Real z = 0;
    for (std::size_t c = 0; c < cols; ++c) z += (o[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) o[c] /= z;
  });
  if (tracking({&x})) {
    NodePtr nx = x.node(), no = out.node();
    record("softmax_rows", {nx}, out, [nx, no, rows, cols] {
      auto& gx = grad_of(nx);
      const auto& y = no->data;
      const auto& gy = no->grad;
      for_each_index(rows, [&](std::size_t r) {
        Real dot = 0;
        for (std::size_t c = 0; c < cols; ++c) dot += gy[r * cols + c] * y[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += y[r * cols + c] * (gy[r * cols + c] - dot);
      });
    });
  }
  return out;
}

Tensor cumsum_last(const Tensor& x) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (cols == 0) throw DimensionError("cumsum_last: empty last dimension");
  Tensor out = Tensor::zeros(x.shape());
  const Real* px = x.data().data();
  Real* po = out.data().data();
  for_each_index(rows, [&](std::size_t r) {
    Real acc = 0;
    for (std::size_t c = 0; c < cols; ++c) po[r * cols + c] = (acc += px[r * cols + c]);
  });
  if (tracking({&x})) {
    NodePtr nx = x.node(), no = out.node();
    record("cumsum_last", {nx}, out, [nx, no, rows, cols] {
      auto& gx = grad_of(nx);
      const auto& gy = no->grad;
      for_each_index(rows, [&](std::size_t r) {
        Real acc = 0;
        for (std::size_t c = cols; c-- > 0;) gx[r * cols + c] += (acc += gy[r * cols + c]);
      });
    });
  }
  return out;
}

Tensor reverse_last(const Tensor& x) {
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.data()[r * cols + c] = x.data()[r * cols + cols - 1 - c];
  if (tracking({&x})) {
    NodePtr nx = x.node(), no = out.node();
    record("reverse_last", {nx}, out, [nx, no, rows, cols] {
      auto& gx = grad_of(nx);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gx[r * cols + cols - 1 - c] += no->grad[r * cols + c];
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps) {
  const std::size_t rows = x.rows(), d = x.cols();
  if (d == 0) throw DimensionError("layer_norm: empty last dimension");
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain/bias " + shape_to_string(gain.shape()) + "/" +
                         shape_to_string(bias.shape()) + " do not match width " + std::to_string(d));
  }
  Tensor out = Tensor::zeros(x.shape());
  std::vector<Real> xhat(x.numel());
  std::vector<Real> inv_std(rows);
  const Real* px = x.data().data();
  const Real* pg = gain.data().data();
  const Real* pb = bias.data().data();
  Real* po = out.data().data();
  for_each_index(rows, [&](std::size_t r) {
    const Real* in = px + r * d;
    Real mean = 0;
    for (std::size_t c = 0; c < d; ++c) mean += in[c];
    mean /= Real(d);
    Real var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (in[c] - mean) * (in[c] - mean);
    var /= Real(d);
    const Real is = Real(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const Real h = (in[c] - mean) * is;
      xhat[r * d + c] = h;
      po[r * d + c] = pg[c] * h + pb[c];
    }
  });
  if (tracking({&x, &gain, &bias})) {
    NodePtr nx = x.node(), ng = gain.node(), nb = bias.node(), no = out.node();
    record("layer_norm", {nx, ng, nb}, out,
           [nx, ng, nb, no, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
             const auto& gy = no->grad;
             if (ng->requires_grad || nb->requires_grad) {
               auto& gg = grad_of(ng);
               auto& gb = grad_of(nb);
               for (std::size_t r = 0; r < rows; ++r)
                 for (std::size_t c = 0; c < d; ++c) {
                   gg[c] += gy[r * d + c] * xhat[r * d + c];
                   gb[c] += gy[r * d + c];
                 }
             }
             if (nx->requires_grad) {
               auto& gx = grad_of(nx);
               const auto& g = ng->data;
               for_each_index(rows, [&](std::size_t r) {
                 Real mean_dh = 0, mean_dh_h = 0;
                 for (std::size_t c = 0; c < d; ++c) {
                   const Real dh = gy[r * d + c] * g[c];
                   mean_dh += dh;
                   mean_dh_h += dh * xhat[r * d + c];
                 }
                 mean_dh /= Real(d);
                 mean_dh_h /= Real(d);
                 for (std::size_t c = 0; c < d; ++c) {
                   const Real dh = gy[r * d + c] * g[c];
                   gx[r * d + c] += inv_std[r] * (dh - mean_dh - xhat[r * d + c] * mean_dh_h);
                 }
               });
             }
           });
  }
  return out;
}

Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng) {
  if (!(rate >= 0.0) || rate >= 1.0) throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  const Real keep_scale = Real(1.0 / (1.0 - rate));
  std::vector<Real> mask(x.numel());
  for (auto& m : mask) m = rng.bernoulli(rate) ? Real(0) : keep_scale;
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) out.data()[i] = x.data()[i] * mask[i];
  if (tracking({&x})) {
    NodePtr nx = x.node(), no = out.node();
    record("dropout", {nx}, out, [nx, no, mask = std::move(mask)] {
      auto& gx = grad_of(nx);
      for (std::size_t i = 0; i < mask.size(); ++i) gx[i] += no->grad[i] * mask[i];
    });
  }
  return out;
}

Tensor ForwardContext::apply_dropout(const Tensor& x) const {
  if (!training || dropout == 0.0) return x;
  if (dropout_rng == nullptr) throw ContractError("dropout during training needs a random stream");
  return hybrid::dropout(x, dropout, training, *dropout_rng);
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_2d("cross_entropy", logits);
  const std::size_t b = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != b) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(b) +
                         " logit rows");
  }
  if (b == 0) throw DataError("cross_entropy over an empty batch");
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw DataError("label " + std::to_string(labels[i]) + " of example " + std::to_string(i) +
                      " outside [0, " + std::to_string(classes) + ")");
    }
  }
  std::vector<Real> probs(b * classes);
  double total = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const Real* row = logits.data().data() + i * classes;
    const Real mx = *std::max_element(row, row + classes);
    Real z = 0;
    for (std::size_t c = 0; c < classes; ++c) z += (probs[i * classes + c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < classes; ++c) probs[i * classes + c] /= z;
    total += static_cast<double>(mx + std::log(z) - row[labels[i]]);
  }
  Tensor out = Tensor::scalar(static_cast<Real>(total / static_cast<double>(b)));
  if (tracking({&logits})) {
    NodePtr nl = logits.node(), no = out.node();
    std::vector<int> kept(labels.begin(), labels.end());
    record("cross_entropy", {nl}, out, [nl, no, b, classes, probs = std::move(probs), kept = std::move(kept)] {
      auto& gl = grad_of(nl);
      const Real g = no->grad[0] / Real(b);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t c = 0; c < classes; ++c) {
          const Real target = static_cast<int>(c) == kept[i] ? Real(1) : Real(0);
          gl[i * classes + c] += g * (probs[i * classes + c] - target);
        }
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_to_string(x.shape()) + " as " + shape_to_string(shape));
  }
  Tensor out = Tensor::from(std::move(shape), x.values());
  if (tracking({&x})) {
    NodePtr nx = x.node(), no = out.node();
    record("reshape", {nx}, out, [nx, no] { kernels::axpy(1, no->grad, grad_of(nx)); });
  }
  return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols needs at least one tensor");
  const std::size_t rows = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw DimensionError("concat_cols: row counts differ (" + shape_to_string(parts[0].shape()) + " vs " +
                           shape_to_string(p.shape()) + ")");
    }
    total += p.cols();
  }
  Tensor out = Tensor::zeros(with_last(parts[0].shape(), total));
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  bool any_grad = false;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t c = p.cols();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(p.data().data() + r * c, c, out.data().data() + r * total + offset);
    offset += c;
    any_grad = any_grad || p.requires_grad();
  }
  if (grad_enabled() && any_grad) {
    std::vector<NodePtr> inputs;
    for (const auto& p : parts) inputs.push_back(p.node());
    NodePtr no = out.node();
    record("concat_cols", inputs, out, [inputs, no, offsets, rows, total] {
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!inputs[i]->requires_grad) continue;
        auto& g = grad_of(inputs[i]);
        const std::size_t c = inputs[i]->shape.empty() ? 1 : inputs[i]->shape.back();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) g[r * c + j] += no->grad[r * total + offsets[i] + j];
      }
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (begin + count > cols) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside width " + std::to_string(cols));
  }
  Tensor out = Tensor::zeros(with_last(x.shape(), count));
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.data().data() + r * cols + begin, count, out.data().data() + r * count);
  if (tracking({&x})) {
    NodePtr nx = x.node(), no = out.node();
    record("slice_cols", {nx}, out, [nx, no, rows, cols, begin, count] {
      auto& g = grad_of(nx);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < count; ++j) g[r * cols + begin + j] += no->grad[r * count + j];
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> index) {
  const std::size_t rows = table.rows(), cols = table.cols();
  for (std::size_t i : index) {
    if (i >= rows) {
      throw DimensionError("gather_rows: index " + std::to_string(i) + " outside " + std::to_string(rows) + " rows");
    }
  }
  Tensor out = Tensor::zeros({index.size(), cols});
  for (std::size_t r = 0; r < index.size(); ++r)
    std::copy_n(table.data().data() + index[r] * cols, cols, out.data().data() + r * cols);
  if (tracking({&table})) {
    NodePtr nt = table.node(), no = out.node();
    std::vector<std::size_t> kept(index.begin(), index.end());
    record("gather_rows", {nt}, out, [nt, no, cols, kept = std::move(kept)] {
      auto& g = grad_of(nt);
      for (std::size_t r = 0; r < kept.size(); ++r)
        for (std::size_t c = 0; c < cols; ++c) g[kept[r] * cols + c] += no->grad[r * cols + c];
    });
  }
  return out;
}

Tensor repeat_cols(const Tensor& x, std::size_t times) {
  if (times == 0) throw DimensionError("repeat_cols: repeat count 0");
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor out = Tensor::zeros(with_last(x.shape(), cols * times));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      std::fill_n(out.data().data() + r * cols * times + c * times, times, x.data()[r * cols + c]);
  if (tracking({&x})) {
    NodePtr nx = x.node(), no = out.node();
    record("repeat_cols", {nx}, out, [nx, no, rows, cols, times] {
      auto& g = grad_of(nx);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
          Real acc = 0;
          for (std::size_t t = 0; t < times; ++t) acc += no->grad[r * cols * times + c * times + t];
          g[r * cols + c] += acc;
        }
    });
  }
  return out;
}

Tensor blend_rows(const Tensor& a, const Tensor& b, std::span<const Real> mask) {
  require_same_shape("blend_rows", a, b);
  const std::size_t rows = a.rows(), cols = a.cols();
  if (mask.size() != rows) throw DimensionError("blend_rows: mask length differs from row count");
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real m = mask[r];
    for (std::size_t c = 0; c < cols; ++c)
      out.data()[r * cols + c] = m * a.data()[r * cols + c] + (Real(1) - m) * b.data()[r * cols + c];
  }
  if (tracking({&a, &b})) {
    NodePtr na = a.node(), nb = b.node(), no = out.node();
    std::vector<Real> kept(mask.begin(), mask.end());
    record("blend_rows", {na, nb}, out, [na, nb, no, rows, cols, kept = std::move(kept)] {
      for (std::size_t r = 0; r < rows; ++r) {
        const Real m = kept[r];
        if (na->requires_grad) {
          auto& g = grad_of(na);
          for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += m * no->grad[r * cols + c];
        }
        if (nb->requires_grad) {
          auto& g = grad_of(nb);
          for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += (Real(1) - m) * no->grad[r * cols + c];
        }
      }
    });
  }
  return out;
}

Tensor interleave_steps(std::span<const Tensor> steps) {
  if (steps.empty()) throw DataError("interleave_steps over a length-0 sequence");
  const std::size_t batch = steps[0].rows(), d = steps[0].cols(), length = steps.size();
  bool any_grad = false;
  for (const auto& s : steps) {
    require_same_shape("interleave_steps", steps[0], s);
    any_grad = any_grad || s.requires_grad();
  }
  Tensor out = Tensor::zeros({batch * length, d});
  for (std::size_t t = 0; t < length; ++t)
    for (std::size_t b = 0; b < batch; ++b)
      std::copy_n(steps[t].data().data() + b * d, d, out.data().data() + (b * length + t) * d);
  if (grad_enabled() && any_grad) {
    std::vector<NodePtr> inputs;
    for (const auto& s : steps) inputs.push_back(s.node());
    NodePtr no = out.node();
    record("interleave_steps", inputs, out, [inputs, no, batch, length, d] {
      for (std::size_t t = 0; t < length; ++t) {
        if (!inputs[t]->requires_grad) continue;
        auto& g = grad_of(inputs[t]);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t c = 0; c < d; ++c) g[b * d + c] += no->grad[(b * length + t) * d + c];
      }
    });
  }
  return out;
}

Tensor step_rows(const Tensor& x, std::size_t batch, std::size_t length, std::size_t t) {
  if (x.rows() != batch * length || t >= length) {
    throw DimensionError("step_rows: step " + std::to_string(t) + " of " + shape_to_string(x.shape()) +
                         " viewed as batch " + std::to_string(batch) + " x length " + std::to_string(length));
  }
  std::vector<std::size_t> index(batch);
  for (std::size_t b = 0; b < batch; ++b) index[b] = b * length + t;
  return gather_rows(x, index);
}

Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, const SequenceLayout& layout,
                        std::size_t heads, AttentionProbe* probe) {
  layout.validate();
  const std::size_t rows = layout.rows();
  if (q.rows() != rows || k.rows() != rows || v.rows() != rows) {
    throw DimensionError("masked_attention: q/k/v rows do not match layout of " + std::to_string(rows) + " rows");
  }
  if (q.cols() != k.cols()) {
    throw DimensionError("masked_attention: query width " + std::to_string(q.cols()) + " differs from key width " +
                         std::to_string(k.cols()));
  }
  if (heads == 0 || q.cols() % heads != 0 || v.cols() % heads != 0) {
    throw ConfigError("masked_attention: " + std::to_string(heads) + " heads do not divide widths");
  }
  const std::size_t batch = layout.batch, n = layout.length;
  const std::size_t dk = q.cols() / heads, dv = v.cols() / heads, qk_width = q.cols(), v_width = v.cols();
  const Real scale = Real(1) / std::sqrt(Real(dk));
  std::vector<Real> probs(batch * heads * n * n, 0);
  Tensor out = Tensor::zeros({rows, v_width});
  const Real* pq = q.data().data();
  const Real* pk = k.data().data();
  const Real* pv = v.data().data();
  Real* po = out.data().data();
  const std::vector<std::size_t>& lengths = layout.lengths;
  const long long nb = static_cast<long long>(batch);
#pragma omp parallel for schedule(static) if (batch * n * n * qk_width >= 1 << 16)
  for (long long bi = 0; bi < nb; ++bi) {
    const std::size_t b = static_cast<std::size_t>(bi);
    const std::size_t len = lengths[b];
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        Real* p = probs.data() + ((b * heads + h) * n + i) * n;
        const Real* qi = pq + (b * n + i) * qk_width + h * dk;
        Real mx = -std::numeric_limits<Real>::infinity();
        for (std::size_t j = 0; j < len; ++j) {
          const Real* kj = pk + (b * n + j) * qk_width + h * dk;
          Real s = 0;
          for (std::size_t c = 0; c < dk; ++c) s += qi[c] * kj[c];
          p[j] = s * scale;
          mx = std::max(mx, p[j]);
        }
        Real z = 0;
        for (std::size_t j = 0; j < len; ++j) z += (p[j] = std::exp(p[j] - mx));
        for (std::size_t j = 0; j < len; ++j) p[j] /= z;
        Real* oi = po + (b * n + i) * v_width + h * dv;
        for (std::size_t j = 0; j < len; ++j) {
          const Real* vj = pv + (b * n + j) * v_width + h * dv;
          for (std::size_t c = 0; c < dv; ++c) oi[c] += p[j] * vj[c];
        }
      }
    }
  }
  if (probe) probe->weights = probs;
  if (tracking({&q, &k, &v})) {
    NodePtr nq = q.node(), nk = k.node(), nv = v.node(), no = out.node();
    record("masked_attention", {nq, nk, nv}, out,
           [nq, nk, nv, no, batch, n, heads, dk, dv, qk_width, v_width, scale, lengths, probs = std::move(probs)] {
             auto& gq = grad_of(nq);
             auto& gk = grad_of(nk);
             auto& gv = grad_of(nv);
             const auto& go = no->grad;
             const long long nb = static_cast<long long>(batch);
#pragma omp parallel for schedule(static) if (batch * n * n * qk_width >= 1 << 16)
             for (long long bi = 0; bi < nb; ++bi) {
               const std::size_t b = static_cast<std::size_t>(bi);
               const std::size_t len = lengths[b];
               std::vector<Real> dp(len);
               for (std::size_t h = 0; h < heads; ++h) {
                 for (std::size_t i = 0; i < n; ++i) {
                   const Real* p = probs.data() + ((b * heads + h) * n + i) * n;
                   const Real* goi = go.data() + (b * n + i) * v_width + h * dv;
                   Real dot = 0;
                   for (std::size_t j = 0; j < len; ++j) {
                     const std::size_t vrow = (b * n + j) * v_width + h * dv;
                     Real s = 0;
                     for (std::size_t c = 0; c < dv; ++c) {
                       s += goi[c] * nv->data[vrow + c];
                       gv[vrow + c] += p[j] * goi[c];
                     }
                     dp[j] = s;
                     dot += p[j] * s;
                   }
                   const std::size_t qrow = (b * n + i) * qk_width + h * dk;
                   for (std::size_t j = 0; j < len; ++j) {
                     const Real ds = p[j] * (dp[j] - dot) * scale;
                     const std::size_t krow = (b * n + j) * qk_width + h * dk;
                     for (std::size_t c = 0; c < dk; ++c) {
                       gq[qrow + c] += ds * nk->data[krow + c];
                       gk[krow + c] += ds * nq->data[qrow + c];
                     }
                   }
                 }
               }
             }
           });
  }
  return out;
}

Tensor attention_pool(const Tensor& queries, const Tensor& x, const SequenceLayout& layout) {
  layout.validate();
  const std::size_t d = x.cols(), nq = queries.rows(), batch = layout.batch, n = layout.length;
  if (queries.cols() != d) {
    throw DimensionError("attention_pool: query width " + std::to_string(queries.cols()) + " differs from " +
                         std::to_string(d));
  }
  if (x.rows() != layout.rows()) throw DimensionError("attention_pool: input rows do not match layout");
  const Real scale = Real(1) / std::sqrt(Real(d));
  std::vector<Real> probs(batch * nq * n, 0);
  Tensor out = Tensor::zeros({batch, nq * d});
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t len = layout.lengths[b];
    for (std::size_t q = 0; q < nq; ++q) {
      Real* p = probs.data() + (b * nq + q) * n;
      const Real* qv = queries.data().data() + q * d;
      Real mx = -std::numeric_limits<Real>::infinity();
      for (std::size_t j = 0; j < len; ++j) {
        const Real* xj = x.data().data() + (b * n + j) * d;
        Real s = 0;
        for (std::size_t c = 0; c < d; ++c) s += qv[c] * xj[c];
        p[j] = s * scale;
        mx = std::max(mx, p[j]);
      }
      Real z = 0;
      for (std::size_t j = 0; j < len; ++j) z += (p[j] = std::exp(p[j] - mx));
      for (std::size_t j = 0; j < len; ++j) p[j] /= z;
      Real* o = out.data().data() + b * nq * d + q * d;
      for (std::size_t j = 0; j < len; ++j) {
        const Real* xj = x.data().data() + (b * n + j) * d;
        for (std::size_t c = 0; c < d; ++c) o[c] += p[j] * xj[c];
      }
    }
  }
  if (tracking({&queries, &x})) {
    NodePtr nqn = queries.node(), nx = x.node(), no = out.node();
    std::vector<std::size_t> lengths = layout.lengths;
    record("attention_pool", {nqn, nx}, out,
           [nqn, nx, no, batch, nq, n, d, scale, lengths = std::move(lengths), probs = std::move(probs)] {
             auto& gq = grad_of(nqn);
             auto& gx = grad_of(nx);
             std::vector<Real> dp(n);
             for (std::size_t b = 0; b < batch; ++b) {
               const std::size_t len = lengths[b];
               for (std::size_t q = 0; q < nq; ++q) {
                 const Real* p = probs.data() + (b * nq + q) * n;
                 const Real* go = no->grad.data() + b * nq * d + q * d;
                 const Real* qv = nqn->data.data() + q * d;
                 Real dot = 0;
                 for (std::size_t j = 0; j < len; ++j) {
                   const std::size_t row = (b * n + j) * d;
                   Real s = 0;
                   for (std::size_t c = 0; c < d; ++c) {
                     s += go[c] * nx->data[row + c];
                     gx[row + c] += p[j] * go[c];
                   }
                   dp[j] = s;
                   dot += p[j] * s;
                 }
                 for (std::size_t j = 0; j < len; ++j) {
                   const Real ds = p[j] * (dp[j] - dot) * scale;
                   const std::size_t row = (b * n + j) * d;
                   for (std::size_t c = 0; c < d; ++c) {
                     gq[q * d + c] += ds * nx->data[row + c];
                     gx[row + c] += ds * qv[c];
                   }
                 }
               }
             }
           });
  }
  return out;
}

}  // namespace hybrid
