#include "hybrid/attention.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

namespace hybrid {

namespace {

Tensor feed_forward(const SanLayerParams& p, const Tensor& x) {
  return linear(relu(linear(x, p.w_ff1, p.b_ff1)), p.w_ff2, p.b_ff2);
}

// Positions for every row of a batch-major layout.
Tensor tiled_positions(const SequenceLayout& layout, std::size_t dim) {
  const Tensor pe = sinusoidal_positions(layout.length, dim);
  Tensor out = Tensor::zeros({layout.rows(), dim});
  for (std::size_t b = 0; b < layout.batch; ++b) {
    std::copy(pe.data().begin(), pe.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(b * pe.numel()));
  }
  return out;
}

}  // namespace

SanLayerParams SanLayerParams::create(ParameterSet& params, const std::string& prefix, std::size_t dim,
                                      std::size_t heads, std::size_t ff_dim, Rng& rng) {
  if (dim == 0 || heads == 0 || dim % heads != 0) {
    throw ConfigError(std::to_string(heads) + " attention heads must divide model dim " + std::to_string(dim));
  }
  if (ff_dim < dim) {
    throw ConfigError("feed-forward dim " + std::to_string(ff_dim) + " is below model dim " + std::to_string(dim));
  }
  SanLayerParams p;
  p.dim = dim;
  p.heads = heads;
  p.ff_dim = ff_dim;
  p.w_query = params.uniform(prefix + ".w_query", {dim, dim}, rng);
  p.b_query = params.zeros(prefix + ".b_query", {dim});
  p.w_key = params.uniform(prefix + ".w_key", {dim, dim}, rng);
  p.w_value = params.uniform(prefix + ".w_value", {dim, dim}, rng);
  p.b_value = params.zeros(prefix + ".b_value", {dim});
  p.w_out = params.uniform(prefix + ".w_out", {dim, dim}, rng);
  p.b_out = params.zeros(prefix + ".b_out", {dim});
  p.w_ff1 = params.uniform(prefix + ".w_ff1", {dim, ff_dim}, rng);
  p.b_ff1 = params.zeros(prefix + ".b_ff1", {ff_dim});
  p.w_ff2 = params.uniform(prefix + ".w_ff2", {ff_dim, dim}, rng);
  p.b_ff2 = params.zeros(prefix + ".b_ff2", {dim});
  p.ln1_gain = params.constant(prefix + ".ln1_gain", {dim}, 1);
  p.ln1_bias = params.zeros(prefix + ".ln1_bias", {dim});
  p.ln2_gain = params.constant(prefix + ".ln2_gain", {dim}, 1);
  p.ln2_bias = params.zeros(prefix + ".ln2_bias", {dim});
  return p;
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.cols() != k.cols()) {
    throw DimensionError("scaled_dot_attention: query width " + std::to_string(q.cols()) + " differs from key width " +
                         std::to_string(k.cols()));
  }
  if (k.rows() != v.rows()) throw DimensionError("scaled_dot_attention: key and value counts differ");
  const Real inv_sqrt = Real(1) / std::sqrt(Real(q.cols()));
  return matmul(softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt)), v);
}

Tensor multi_head_attention(const SanLayerParams& p, const Tensor& x, const SequenceLayout& layout,
                            AttentionProbe* probe) {
  const Tensor q = linear(x, p.w_query, p.b_query);
  const Tensor k = matmul(x, p.w_key);
  const Tensor v = linear(x, p.w_value, p.b_value);
  return linear(masked_attention(q, k, v, layout, p.heads, probe), p.w_out, p.b_out);
}

Tensor san_layer(const SanLayerParams& p, const Tensor& x, const SequenceLayout& layout, const ForwardContext& ctx,
                 bool post_norm, AttentionProbe* probe) {
  if (x.ndim() != 2 || x.cols() != p.dim) {
    throw DimensionError("san_layer: input " + shape_to_string(x.shape()) + " for model dim " + std::to_string(p.dim));
  }
  if (post_norm) {
    const Tensor y = layer_norm(add(x, ctx.apply_dropout(multi_head_attention(p, x, layout, probe))), p.ln1_gain,
                                p.ln1_bias);
    return layer_norm(add(y, ctx.apply_dropout(feed_forward(p, y))), p.ln2_gain, p.ln2_bias);
  }
  const Tensor y =
      add(x, ctx.apply_dropout(multi_head_attention(p, layer_norm(x, p.ln1_gain, p.ln1_bias), layout, probe)));
  return add(y, ctx.apply_dropout(feed_forward(p, layer_norm(y, p.ln2_gain, p.ln2_bias))));
}

Tensor sinusoidal_positions(std::size_t length, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw ConfigError("positional encoding needs an even dim, got " + std::to_string(dim));
  Tensor pe = Tensor::zeros({length, dim});
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < dim; i += 2) {
      const double angle = double(pos) / std::pow(10000.0, double(i) / double(dim));
      pe.data()[pos * dim + i] = Real(std::sin(angle));
      pe.data()[pos * dim + i + 1] = Real(std::cos(angle));
    }
  }
  return pe;
}

SanStack::SanStack(ParameterSet& params, const std::string& prefix, const SanStackConfig& config, Rng& rng)
    : config_(config) {
  if (config.layers == 0) throw ConfigError("attention stack needs at least one layer");
  if (config.use_positional && config.dim % 2 != 0) {
    throw ConfigError("positional encoding needs an even model dim, got " + std::to_string(config.dim));
  }
  for (std::size_t l = 0; l < config.layers; ++l) {
    layers_.push_back(SanLayerParams::create(params, prefix + ".layer" + std::to_string(l), config.dim, config.heads,
                                             config.ff_dim, rng));
  }
  if (config.final_norm && !config.post_norm) {
    final_gain_ = params.constant(prefix + ".final_gain", {config.dim}, 1);
    final_bias_ = params.zeros(prefix + ".final_bias", {config.dim});
  }
}

Tensor SanStack::run(const Tensor& x, const SequenceLayout& layout, const ForwardContext& ctx,
                     std::vector<AttentionProbe>* probes) const {
  layout.validate();
  if (x.ndim() != 2 || x.rows() != layout.rows() || x.cols() != config_.dim) {
    throw DimensionError("attention stack input " + shape_to_string(x.shape()) + " does not match layout of " +
                         std::to_string(layout.rows()) + " rows x " + std::to_string(config_.dim));
  }
  if (probes != nullptr) probes->assign(layers_.size(), {});
  Tensor h = config_.use_positional ? add(x, tiled_positions(layout, config_.dim)) : x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    h = san_layer(layers_[l], h, layout, ctx, config_.post_norm, probes ? &(*probes)[l] : nullptr);
  }
  if (final_gain_.defined()) h = layer_norm(h, final_gain_, final_bias_);
  return h;
}

Tensor run_san_encoder(const SanStack& stack, const Tensor& inputs, const ForwardContext& ctx) {
  if (inputs.ndim() != 2 || inputs.rows() == 0) throw DataError("attention encoder needs a non-empty sequence");
  return stack.run(inputs, SequenceLayout::single(inputs.rows()), ctx);
}

void write_attention_csv(std::ostream& out, const std::vector<AttentionProbe>& probes, const SequenceLayout& layout,
                         std::size_t heads, std::size_t batch_index) {
  const std::size_t n = layout.length;
  const std::size_t len = layout.lengths.at(batch_index);
  char buf[32];
  for (std::size_t l = 0; l < probes.size(); ++l) {
    for (std::size_t h = 0; h < heads; ++h) {
      const Real* base = probes[l].weights.data() + (batch_index * heads + h) * n * n;
      for (std::size_t i = 0; i < len; ++i) {
        for (std::size_t j = 0; j < len; ++j) {
          std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(base[i * n + j]));
          out << l << ',' << h << ',' << i << ',' << j << ',' << buf << '\n';
        }
      }
    }
  }
}

}  // namespace hybrid
