#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hybrid/attention.hpp"
#include "hybrid/recurrent.hpp"

namespace hybrid {

enum class EncoderKind { san, lstm, onlstm, hybrid };

const char* to_string(EncoderKind kind);
EncoderKind encoder_kind_from_string(const std::string& name);

struct EncoderConfig {
  EncoderKind kind = EncoderKind::hybrid;
  std::size_t recurrent_layers = 1;  // K
  std::size_t attention_layers = 1;  // L
  std::size_t dim = 256;
  std::size_t heads = 4;
  std::size_t ff_dim = 1024;
  std::size_t chunk = 0;  // neurons per master-gate level; 0 selects max(1, dim / 16)
  double dropout = 0.2;
  bool use_positional = false;
  bool use_short_cut = true;
  std::size_t vocab_size = 12;
  /// Hybrid only: attention stage first, recurrent stage on top.
  bool reverse_cascade = false;
  /// Cell of the hybrid's recurrent stage; the lstm and onlstm kinds fix it.
  CellKind recurrent_cell = CellKind::onlstm;
  bool recurrent_residual = true;
  bool reversed_master_input = false;
  bool post_norm = false;
  bool final_norm = true;

  /// Copy with automatic fields filled in.
  EncoderConfig resolved() const;
  /// Throws ConfigError listing every violated constraint.
  void validate() const;
  CellKind cell() const;
};

struct EncoderDiagnostics {
  std::vector<std::vector<GateTrace>> gates;  // per recurrent layer, per step
  std::vector<AttentionProbe> attention;      // per attention layer
};

/// Stage outputs over a batch-major layout. Stages the kind lacks are
/// undefined tensors.
struct EncoderOutput {
  Tensor output;
  Tensor recurrent;
  Tensor attention;
};

/// Recurrent stack over x, then the attention stack over its output.
std::pair<Tensor, Tensor> encode_cascaded(const RecurrentStack& recurrent, const SanStack& attention, const Tensor& x,
                                          const SequenceLayout& layout, const ForwardContext& ctx = {},
                                          EncoderDiagnostics* diagnostics = nullptr);

/// Parameter-free elementwise sum of the two stage outputs.
Tensor short_cut_combine(const Tensor& h_rnn, const Tensor& h_san);

class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& config, ParameterSet& params, Rng& rng, const std::string& prefix = "encoder");

  const EncoderConfig& config() const noexcept { return config_; }
  const Tensor& embedding() const noexcept { return embedding_; }
  const RecurrentStack* recurrent() const { return has_recurrent_ ? &recurrent_ : nullptr; }
  const SanStack* attention() const { return has_attention_ ? &attention_ : nullptr; }

  /// Embedding rows scaled by sqrt(d), then dropout. Token ids are batch-major.
  Tensor embed(std::span<const int> tokens, const SequenceLayout& layout, const ForwardContext& ctx = {}) const;
  /// Runs the configured stack over already embedded rows.
  EncoderOutput run_stack(const Tensor& x, const SequenceLayout& layout, const ForwardContext& ctx = {},
                          EncoderDiagnostics* diagnostics = nullptr) const;
  EncoderOutput encode(std::span<const int> tokens, const SequenceLayout& layout, const ForwardContext& ctx = {},
                       EncoderDiagnostics* diagnostics = nullptr) const;
  /// One unpadded sequence: [N] token ids -> [N x d].
  Tensor operator()(std::span<const int> tokens) const;

 private:
  EncoderConfig config_;
  Tensor embedding_;
  RecurrentStack recurrent_;
  SanStack attention_;
  bool has_recurrent_ = false;
  bool has_attention_ = false;
};

Encoder build_encoder(const EncoderConfig& config, ParameterSet& params, Rng& rng);

}  // namespace hybrid
