#include "hybrid/encoder.hpp"

#include <cmath>

namespace hybrid {

const char* to_string(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::san: return "san";
    case EncoderKind::lstm: return "lstm";
    case EncoderKind::onlstm: return "onlstm";
    case EncoderKind::hybrid: return "hybrid";
  }
  return "?";
}

EncoderKind encoder_kind_from_string(const std::string& name) {
  for (EncoderKind k : {EncoderKind::san, EncoderKind::lstm, EncoderKind::onlstm, EncoderKind::hybrid}) {
    if (name == to_string(k)) return k;
  }
  throw ConfigError("unknown encoder kind '" + name + "' (expected san, lstm, onlstm or hybrid)");
}

EncoderConfig EncoderConfig::resolved() const {
  EncoderConfig c = *this;
  if (c.chunk == 0) c.chunk = std::max<std::size_t>(1, c.dim / 16);
  if (c.kind == EncoderKind::lstm) c.recurrent_cell = CellKind::lstm;
  if (c.kind == EncoderKind::onlstm) c.recurrent_cell = CellKind::onlstm;
  return c;
}

CellKind EncoderConfig::cell() const {
  if (kind == EncoderKind::lstm) return CellKind::lstm;
  if (kind == EncoderKind::onlstm) return CellKind::onlstm;
  return recurrent_cell;
}

void EncoderConfig::validate() const {
  std::vector<std::string> violations;
  const std::size_t k = recurrent_layers, l = attention_layers;
  switch (kind) {
    case EncoderKind::san:
      if (k != 0) violations.push_back("kind=san requires recurrent_layers=0");
      if (l == 0) violations.push_back("kind=san requires attention_layers>=1");
      break;
    case EncoderKind::lstm:
    case EncoderKind::onlstm:
      if (l != 0) violations.push_back(std::string("kind=") + to_string(kind) + " requires attention_layers=0");
      if (k == 0) violations.push_back(std::string("kind=") + to_string(kind) + " requires recurrent_layers>=1");
      break;
    case EncoderKind::hybrid:
      if (k == 0 || l == 0) violations.push_back("kind=hybrid requires recurrent_layers>=1 and attention_layers>=1");
      break;
  }
  if (dim == 0) violations.push_back("dim must be positive");
  if (vocab_size == 0) violations.push_back("vocab_size must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) violations.push_back("dropout must be in [0, 1)");
  if (l > 0) {
    if (heads == 0 || (dim > 0 && dim % heads != 0)) violations.push_back("heads must divide dim");
    if (ff_dim < dim) violations.push_back("ff_dim must be at least dim");
    if (use_positional && dim % 2 != 0) violations.push_back("positional encoding needs an even dim");
  }
  const std::size_t c = resolved().chunk;
  if (k > 0 && cell() == CellKind::onlstm && dim > 0 && dim % c != 0) violations.push_back("chunk must divide dim");
  if (reverse_cascade && kind != EncoderKind::hybrid) violations.push_back("reverse_cascade applies to kind=hybrid only");
  if (!violations.empty()) {
    std::string msg = "invalid encoder config:";
    for (const auto& v : violations) msg += "\n  - " + v;
    throw ConfigError(msg);
  }
}

std::pair<Tensor, Tensor> encode_cascaded(const RecurrentStack& recurrent, const SanStack& attention, const Tensor& x,
                                          const SequenceLayout& layout, const ForwardContext& ctx,
                                          EncoderDiagnostics* diagnostics) {
  if (recurrent.config().hidden_dim != attention.config().dim) {
    throw ConfigError("recurrent output dim " + std::to_string(recurrent.config().hidden_dim) +
                      " does not match attention dim " + std::to_string(attention.config().dim));
  }
  Tensor h_rnn = recurrent.run(x, layout, ctx, diagnostics ? &diagnostics->gates : nullptr);
  Tensor h_san = attention.run(h_rnn, layout, ctx, diagnostics ? &diagnostics->attention : nullptr);
  return {std::move(h_rnn), std::move(h_san)};
}

Tensor short_cut_combine(const Tensor& h_rnn, const Tensor& h_san) {
  if (h_rnn.shape() != h_san.shape()) {
    throw DimensionError("short-cut over " + shape_to_string(h_rnn.shape()) + " and " +
                         shape_to_string(h_san.shape()));
  }
  return add(h_rnn, h_san);
}

Encoder::Encoder(const EncoderConfig& config, ParameterSet& params, Rng& rng, const std::string& prefix)
    : config_(config.resolved()) {
  config_.validate();
  const std::size_t d = config_.dim;
  embedding_ = params.uniform(prefix + ".embedding", {config_.vocab_size, d}, Real(1 / std::sqrt(double(d))), rng);
  const RecurrentStackConfig rc{config_.cell(),     config_.recurrent_layers,   d, d, config_.chunk,
                                config_.recurrent_residual, config_.reversed_master_input};
  const SanStackConfig sc{config_.attention_layers, d,
                          config_.heads,            config_.ff_dim,
                          config_.use_positional,   config_.post_norm,
                          config_.final_norm};
  auto build_recurrent = [&] {
    recurrent_ = RecurrentStack(params, prefix + ".recurrent", rc, rng);
    has_recurrent_ = true;
  };
  auto build_attention = [&] {
    attention_ = SanStack(params, prefix + ".attention", sc, rng);
    has_attention_ = true;
  };
  if (config_.reverse_cascade) {
    build_attention();
    build_recurrent();
  } else {
    if (config_.recurrent_layers > 0) build_recurrent();
    if (config_.attention_layers > 0) build_attention();
  }
}

Tensor Encoder::embed(std::span<const int> tokens, const SequenceLayout& layout, const ForwardContext& ctx) const {
  layout.validate();
  if (tokens.size() != layout.rows()) {
    throw DimensionError(std::to_string(tokens.size()) + " tokens for a layout of " + std::to_string(layout.rows()) +
                         " rows");
  }
  std::vector<std::size_t> index(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= config_.vocab_size) {
      throw DataError("token id " + std::to_string(tokens[i]) + " outside vocabulary of " +
                      std::to_string(config_.vocab_size));
    }
    index[i] = static_cast<std::size_t>(tokens[i]);
  }
  return ctx.apply_dropout(scale(gather_rows(embedding_, index), Real(std::sqrt(double(config_.dim)))));
}

EncoderOutput Encoder::run_stack(const Tensor& x, const SequenceLayout& layout, const ForwardContext& ctx,
                                 EncoderDiagnostics* diagnostics) const {
  EncoderOutput out;
  if (has_recurrent_ && has_attention_) {
    if (config_.reverse_cascade) {
      out.attention = attention_.run(x, layout, ctx, diagnostics ? &diagnostics->attention : nullptr);
      out.recurrent = recurrent_.run(out.attention, layout, ctx, diagnostics ? &diagnostics->gates : nullptr);
    } else {
      std::tie(out.recurrent, out.attention) = encode_cascaded(recurrent_, attention_, x, layout, ctx, diagnostics);
    }
    out.output = config_.use_short_cut ? short_cut_combine(out.recurrent, out.attention)
                                       : (config_.reverse_cascade ? out.recurrent : out.attention);
  } else if (has_recurrent_) {
    out.recurrent = recurrent_.run(x, layout, ctx, diagnostics ? &diagnostics->gates : nullptr);
    out.output = out.recurrent;
  } else {
    out.attention = attention_.run(x, layout, ctx, diagnostics ? &diagnostics->attention : nullptr);
    out.output = out.attention;
  }
  return out;
}

EncoderOutput Encoder::encode(std::span<const int> tokens, const SequenceLayout& layout, const ForwardContext& ctx,
                              EncoderDiagnostics* diagnostics) const {
  return run_stack(embed(tokens, layout, ctx), layout, ctx, diagnostics);
}

Tensor Encoder::operator()(std::span<const int> tokens) const {
  if (tokens.empty()) throw DataError("cannot encode an empty sequence");
  return encode(tokens, SequenceLayout::single(tokens.size())).output;
}

Encoder build_encoder(const EncoderConfig& config, ParameterSet& params, Rng& rng) {
  return Encoder(config, params, rng);
}

}  // namespace hybrid
