#include "hybrid/recurrent.hpp"

#include <cstdio>
#include <ostream>

namespace hybrid {

namespace {

struct StandardGates {
  Tensor forget;
  Tensor input;
  Tensor output;
  Tensor candidate;
};

void require_width(const char* where, const Tensor& t, std::size_t width) {
  if (t.ndim() != 2 || t.cols() != width) {
    throw DimensionError(std::string(where) + ": expected [batch x " + std::to_string(width) + "], got " +
                         shape_to_string(t.shape()));
  }
}

void require_state(const char* where, const RecurrentState& s, std::size_t batch, std::size_t hidden) {
  require_width(where, s.h, hidden);
  require_width(where, s.c, hidden);
  if (s.h.rows() != batch || s.c.rows() != batch) {
    throw DimensionError(std::string(where) + ": state batch does not match input batch");
  }
}

// pre = x_proj + h W_h, where x_proj already carries x W_x + b.
StandardGates split_gates(const Tensor& pre, std::size_t hidden) {
  return {sigmoid(slice_cols(pre, 0, hidden)), sigmoid(slice_cols(pre, hidden, hidden)),
          sigmoid(slice_cols(pre, 2 * hidden, hidden)), tanh(slice_cols(pre, 3 * hidden, hidden))};
}

// Shared by both cells so that ON-LSTM with unit overlap reduces to LSTM.
RecurrentState cell_update(const Tensor& forget, const Tensor& input, const StandardGates& g, const Tensor& c_prev) {
  RecurrentState next;
  next.c = add(mul(forget, c_prev), mul(input, g.candidate));
  next.h = mul(g.output, tanh(next.c));
  return next;
}

Tensor input_projection(const LstmParams& p, const Tensor& x) { return linear(x, p.w_input, p.bias); }

Tensor master_input_projection(const OnLstmParams& p, const Tensor& x) {
  return linear(x, p.w_master_input, p.master_bias);
}

// 1 - cumax(x) as the exclusive tail sum of softmax(x): fl(t + p) - p >= 0,
// so the gate never rounds below zero.
Tensor complement_cumax(const Tensor& logits) {
  const Tensor p = softmax_rows(logits);
  return sub(reverse_last(cumsum_last(reverse_last(p))), p);
}

MasterGates master_gates_from_logits(const OnLstmParams& p, const Tensor& logits) {
  const std::size_t levels = p.levels();
  MasterGates g;
  g.forget_chunks = cumax(slice_cols(logits, 0, levels));
  const Tensor input_logits = slice_cols(logits, levels, levels);
  g.input_chunks = p.reversed_master_input ? cumax(input_logits, CumaxDirection::reversed)
                                           : complement_cumax(input_logits);
  g.forget = p.chunk == 1 ? g.forget_chunks : repeat_cols(g.forget_chunks, p.chunk);
  g.input = p.chunk == 1 ? g.input_chunks : repeat_cols(g.input_chunks, p.chunk);
  return g;
}

RecurrentState lstm_step_projected(const LstmParams& p, const Tensor& x_proj, const RecurrentState& state) {
  const Tensor pre = add(x_proj, matmul(state.h, p.w_hidden));
  const StandardGates g = split_gates(pre, p.hidden_dim);
  RecurrentState next = cell_update(g.forget, g.input, g, state.c);
  next.trace = state.trace;
  return next;
}

RecurrentState onlstm_step_projected(const OnLstmParams& p, const Tensor& x_proj, const Tensor& xm_proj,
                                     const RecurrentState& state, const MasterGateOverride* override_gates) {
  const std::size_t hidden = p.lstm.hidden_dim;
  const Tensor pre = add(x_proj, matmul(state.h, p.lstm.w_hidden));
  const StandardGates g = split_gates(pre, hidden);

  MasterGates m;
  if (override_gates != nullptr) {
    require_width("on_lstm_cell_step override", override_gates->forget, hidden);
    require_width("on_lstm_cell_step override", override_gates->input, hidden);
    m.forget = override_gates->forget;
    m.input = override_gates->input;
  } else {
    m = master_gates_from_logits(p, add(xm_proj, matmul(state.h, p.w_master_hidden)));
  }

  const Tensor overlap = mul(m.forget, m.input);
  const Tensor forget_hat = add(mul(g.forget, overlap), sub(m.forget, overlap));
  const Tensor input_hat = add(mul(g.input, overlap), sub(m.input, overlap));
  RecurrentState next = cell_update(forget_hat, input_hat, g, state.c);
  next.trace = state.trace;
  if (state.trace) {
    state.trace->push_back(
        {m.forget_chunks, m.input_chunks, m.forget, m.input, overlap, g.forget, g.input, forget_hat, input_hat});
  }
  return next;
}

}  // namespace

LstmParams LstmParams::create(ParameterSet& params, const std::string& prefix, std::size_t input_dim,
                              std::size_t hidden_dim, Rng& rng) {
  if (input_dim == 0 || hidden_dim == 0) throw ConfigError("LSTM dimensions must be positive");
  LstmParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.w_input = params.uniform(prefix + ".w_input", {input_dim, 4 * hidden_dim}, rng);
  p.w_hidden = params.uniform(prefix + ".w_hidden", {hidden_dim, 4 * hidden_dim}, rng);
  std::vector<Real> bias(4 * hidden_dim, Real(0));
  std::fill(bias.begin(), bias.begin() + static_cast<std::ptrdiff_t>(hidden_dim), Real(1));
  p.bias = params.add(prefix + ".bias", Tensor::from({4 * hidden_dim}, std::move(bias)));
  return p;
}

OnLstmParams OnLstmParams::create(ParameterSet& params, const std::string& prefix, std::size_t input_dim,
                                  std::size_t hidden_dim, std::size_t chunk, Rng& rng) {
  if (chunk == 0 || hidden_dim % chunk != 0) {
    throw ConfigError("chunk size " + std::to_string(chunk) + " must divide hidden size " +
                      std::to_string(hidden_dim));
  }
  OnLstmParams p;
  p.lstm = LstmParams::create(params, prefix, input_dim, hidden_dim, rng);
  p.chunk = chunk;
  const std::size_t levels = hidden_dim / chunk;
  p.w_master_input = params.uniform(prefix + ".w_master_input", {input_dim, 2 * levels}, rng);
  p.w_master_hidden = params.uniform(prefix + ".w_master_hidden", {hidden_dim, 2 * levels}, rng);
  p.master_bias = params.zeros(prefix + ".master_bias", {2 * levels});
  return p;
}

RecurrentState RecurrentState::zeros(std::size_t batch, std::size_t hidden) {
  return {Tensor::zeros({batch, hidden}), Tensor::zeros({batch, hidden}), nullptr};
}

RecurrentState lstm_cell_step(const LstmParams& params, const Tensor& x, const RecurrentState& state) {
  require_width("lstm_cell_step input", x, params.input_dim);
  require_state("lstm_cell_step", state, x.rows(), params.hidden_dim);
  return lstm_step_projected(params, input_projection(params, x), state);
}

Tensor cumax(const Tensor& logits, CumaxDirection direction) {
  if (logits.cols() == 0) throw DimensionError("cumax over an empty last dimension");
  if (direction == CumaxDirection::forward) return cumsum_last(softmax_rows(logits));
  return reverse_last(cumsum_last(softmax_rows(reverse_last(logits))));
}

MasterGates master_gates(const OnLstmParams& params, const Tensor& x, const Tensor& h_prev) {
  require_width("master_gates input", x, params.lstm.input_dim);
  require_width("master_gates state", h_prev, params.lstm.hidden_dim);
  return master_gates_from_logits(params, add(master_input_projection(params, x),
                                              matmul(h_prev, params.w_master_hidden)));
}

RecurrentState on_lstm_cell_step(const OnLstmParams& params, const Tensor& x, const RecurrentState& state,
                                 const MasterGateOverride* override_gates) {
  require_width("on_lstm_cell_step input", x, params.lstm.input_dim);
  require_state("on_lstm_cell_step", state, x.rows(), params.lstm.hidden_dim);
  return onlstm_step_projected(params, input_projection(params.lstm, x), master_input_projection(params, x), state,
                               override_gates);
}

RecurrentStack::RecurrentStack(ParameterSet& params, const std::string& prefix, const RecurrentStackConfig& config,
                               Rng& rng)
    : config_(config) {
  if (config.layers == 0) throw ConfigError("recurrent stack needs at least one layer");
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::size_t in = l == 0 ? config.input_dim : config.hidden_dim;
    const std::string name = prefix + ".layer" + std::to_string(l);
    if (config.cell == CellKind::lstm) {
      lstm_.push_back(LstmParams::create(params, name, in, config.hidden_dim, rng));
    } else {
      onlstm_.push_back(OnLstmParams::create(params, name, in, config.hidden_dim, config.chunk, rng));
      onlstm_.back().reversed_master_input = config.reversed_master_input;
    }
  }
}

Tensor RecurrentStack::run(const Tensor& x, const SequenceLayout& layout, const ForwardContext& ctx,
                           std::vector<std::vector<GateTrace>>* traces) const {
  layout.validate();
  if (x.ndim() != 2 || x.rows() != layout.rows()) {
    throw DimensionError("recurrent stack input " + shape_to_string(x.shape()) + " does not match " +
                         std::to_string(layout.rows()) + " layout rows");
  }
  if (traces != nullptr) traces->assign(config_.layers, {});

  const std::size_t batch = layout.batch, length = layout.length, hidden = config_.hidden_dim;
  // mask[t][b] = 1 while step t is inside sequence b
  std::vector<std::vector<Real>> masks;
  if (layout.padded()) {
    masks.assign(length, std::vector<Real>(batch, Real(0)));
    for (std::size_t t = 0; t < length; ++t) {
      for (std::size_t b = 0; b < batch; ++b) masks[t][b] = t < layout.lengths[b] ? Real(1) : Real(0);
    }
  }
  auto all_valid = [&](std::size_t t) {
    for (std::size_t b = 0; b < batch; ++b) {
      if (t >= layout.lengths[b]) return false;
    }
    return true;
  };

  Tensor layer_input = x;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const bool on = config_.cell == CellKind::onlstm;
    const LstmParams& lp = on ? onlstm_[l].lstm : lstm_[l];
    require_width("recurrent layer input", layer_input, lp.input_dim);

    const Tensor x_proj = input_projection(lp, layer_input);
    const Tensor xm_proj = on ? master_input_projection(onlstm_[l], layer_input) : Tensor();
    RecurrentState state = RecurrentState::zeros(batch, hidden);
    if (on && traces != nullptr) state.trace = std::make_shared<std::vector<GateTrace>>();

    std::vector<Tensor> outputs;
    outputs.reserve(length);
    for (std::size_t t = 0; t < length; ++t) {
      const Tensor xt = step_rows(x_proj, batch, length, t);
      RecurrentState next = on ? onlstm_step_projected(onlstm_[l], xt, step_rows(xm_proj, batch, length, t), state,
                                                       nullptr)
                               : lstm_step_projected(lp, xt, state);
      if (!masks.empty() && !all_valid(t)) {
        next.h = blend_rows(next.h, state.h, masks[t]);
        next.c = blend_rows(next.c, state.c, masks[t]);
      }
      state = std::move(next);
      outputs.push_back(state.h);
    }
    if (traces != nullptr && state.trace) (*traces)[l] = std::move(*state.trace);

    Tensor out = interleave_steps(outputs);
    if (config_.residual && l > 0) out = add(out, layer_input);
    layer_input = ctx.apply_dropout(out);
  }
  return layer_input;
}

std::vector<Tensor> RecurrentStack::run_steps(std::span<const Tensor> steps, const SequenceLayout& layout,
                                              const ForwardContext& ctx,
                                              std::vector<std::vector<GateTrace>>* traces) const {
  if (steps.size() != layout.length) {
    throw DimensionError("got " + std::to_string(steps.size()) + " steps for a layout of length " +
                         std::to_string(layout.length));
  }
  const Tensor out = run(interleave_steps(steps), layout, ctx, traces);
  std::vector<Tensor> result;
  result.reserve(layout.length);
  for (std::size_t t = 0; t < layout.length; ++t) result.push_back(step_rows(out, layout.batch, layout.length, t));
  return result;
}

Tensor run_recurrent_encoder(const RecurrentStack& stack, const Tensor& inputs, const ForwardContext& ctx) {
  if (inputs.ndim() != 2 || inputs.rows() == 0) throw DataError("recurrent encoder needs a non-empty sequence");
  return stack.run(inputs, SequenceLayout::single(inputs.rows()), ctx);
}

void write_gate_trace_csv(std::ostream& out, std::size_t expr_index,
                          const std::vector<std::vector<GateTrace>>& traces, std::span<const std::string> tokens) {
  char buf[64];
  for (std::size_t l = 0; l < traces.size(); ++l) {
    for (std::size_t t = 0; t < traces[l].size(); ++t) {
      const GateTrace& g = traces[l][t];
      const std::string token = t < tokens.size() ? tokens[t] : std::string();
      for (std::size_t j = 0; j < g.master_forget_chunks.cols(); ++j) {
        out << expr_index << ',' << l << ',' << t << ',' << token << ',' << j << ',';
        std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(g.master_forget_chunks.at(0, j)));
        out << buf << ',';
        std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(g.master_input_chunks.at(0, j)));
        out << buf << '\n';
      }
    }
  }
}

}  // namespace hybrid
