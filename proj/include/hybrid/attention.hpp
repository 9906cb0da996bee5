#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "hybrid/ops.hpp"
#include "hybrid/params.hpp"

namespace hybrid {

/// One pre-norm encoder layer: self-attention then a ReLU feed-forward
/// block, each wrapped in a residual connection.
struct SanLayerParams {
  std::size_t dim = 0;
  std::size_t heads = 1;
  std::size_t ff_dim = 0;
  Tensor w_query, b_query;  // [d x d], [d]; head j owns columns [j*d/h, (j+1)*d/h)
  Tensor w_key;  // no bias: a shared key shift cancels in the softmax
  Tensor w_value, b_value;
  Tensor w_out, b_out;
  Tensor w_ff1, b_ff1;  // [d x d_ff]
  Tensor w_ff2, b_ff2;  // [d_ff x d]
  Tensor ln1_gain, ln1_bias;
  Tensor ln2_gain, ln2_bias;

  static SanLayerParams create(ParameterSet& params, const std::string& prefix, std::size_t dim, std::size_t heads,
                               std::size_t ff_dim, Rng& rng);
};

/// softmax(q k^T / sqrt(d_k)) v for one unpadded sequence, built from
/// primitive operations.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v);

Tensor multi_head_attention(const SanLayerParams& params, const Tensor& x, const SequenceLayout& layout,
                            AttentionProbe* probe = nullptr);

Tensor san_layer(const SanLayerParams& params, const Tensor& x, const SequenceLayout& layout,
                 const ForwardContext& ctx, bool post_norm = false, AttentionProbe* probe = nullptr);

/// Row p, columns 2i and 2i+1: sin and cos of p / 10000^(2i/d).
Tensor sinusoidal_positions(std::size_t length, std::size_t dim);

struct SanStackConfig {
  std::size_t layers = 1;
  std::size_t dim = 0;
  std::size_t heads = 1;
  std::size_t ff_dim = 0;
  bool use_positional = true;
  bool post_norm = false;
  bool final_norm = true;  // ignored with post_norm, whose layers already end normalized
};

class SanStack {
 public:
  SanStack() = default;
  SanStack(ParameterSet& params, const std::string& prefix, const SanStackConfig& config, Rng& rng);

  const SanStackConfig& config() const noexcept { return config_; }
  const SanLayerParams& layer(std::size_t i) const { return layers_.at(i); }

  /// [batch*length x d] -> [batch*length x d]. When `probes` is given it
  /// receives one attention map per layer.
  Tensor run(const Tensor& x, const SequenceLayout& layout, const ForwardContext& ctx,
             std::vector<AttentionProbe>* probes = nullptr) const;

 private:
  SanStackConfig config_;
  std::vector<SanLayerParams> layers_;
  Tensor final_gain_, final_bias_;
};

Tensor run_san_encoder(const SanStack& stack, const Tensor& inputs, const ForwardContext& ctx = {});

/// CSV rows layer,head,query,key,weight for sequence `batch_index`.
void write_attention_csv(std::ostream& out, const std::vector<AttentionProbe>& probes, const SequenceLayout& layout,
                         std::size_t heads, std::size_t batch_index = 0);

}  // namespace hybrid
