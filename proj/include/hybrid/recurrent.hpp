#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hybrid/ops.hpp"
#include "hybrid/params.hpp"

namespace hybrid {

/// Input and recurrent projections for the four standard gates. Column
/// blocks of every weight are ordered forget | input | output | candidate.
struct LstmParams {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  Tensor w_input;   // [input_dim x 4*hidden]
  Tensor w_hidden;  // [hidden x 4*hidden]
  Tensor bias;      // [4*hidden]; forget block starts at +1

  static LstmParams create(ParameterSet& params, const std::string& prefix, std::size_t input_dim,
                           std::size_t hidden_dim, Rng& rng);
};

/// LSTM parameters plus the two master-gate heads. Each head maps
/// (x_t, h_{t-1}) to hidden/chunk logits; the heads are stored side by side,
/// forget head first.
struct OnLstmParams {
  LstmParams lstm;
  std::size_t chunk = 1;  // neurons per chunk
  Tensor w_master_input;   // [input_dim x 2*levels]
  Tensor w_master_hidden;  // [hidden x 2*levels]
  Tensor master_bias;      // [2*levels]
  /// Use reverse-cumax for the master input gate instead of 1 - cumax.
  bool reversed_master_input = false;

  std::size_t levels() const { return lstm.hidden_dim / chunk; }

  static OnLstmParams create(ParameterSet& params, const std::string& prefix, std::size_t input_dim,
                             std::size_t hidden_dim, std::size_t chunk, Rng& rng);
};

/// Per-step diagnostics of an ON-LSTM update. All tensors are [batch x ...].
struct GateTrace {
  Tensor master_forget_chunks;  // [batch x levels]
  Tensor master_input_chunks;
  Tensor master_forget;  // expanded to [batch x hidden]
  Tensor master_input;
  Tensor overlap;
  Tensor forget;  // standard gates
  Tensor input;
  Tensor forget_hat;  // effective gates used for the cell update
  Tensor input_hat;
};

struct RecurrentState {
  Tensor h;  // [batch x hidden]
  Tensor c;
  /// When set, ON-LSTM steps append their gate trace here.
  std::shared_ptr<std::vector<GateTrace>> trace;

  static RecurrentState zeros(std::size_t batch, std::size_t hidden);
};

RecurrentState lstm_cell_step(const LstmParams& params, const Tensor& x, const RecurrentState& state);

enum class CumaxDirection { forward, reversed };

/// cumsum(softmax(logits)) along the last dimension. The reversed direction
/// runs the same map over the index-reversed logits and flips the result.
Tensor cumax(const Tensor& logits, CumaxDirection direction = CumaxDirection::forward);

struct MasterGates {
  Tensor forget_chunks;  // [batch x levels], non-decreasing
  Tensor input_chunks;   // [batch x levels], non-increasing
  Tensor forget;         // each chunk value repeated across its neurons
  Tensor input;
};

MasterGates master_gates(const OnLstmParams& params, const Tensor& x, const Tensor& h_prev);

/// Replaces the computed master gates (full width) in a step. Test hook.
struct MasterGateOverride {
  Tensor forget;
  Tensor input;
};

RecurrentState on_lstm_cell_step(const OnLstmParams& params, const Tensor& x, const RecurrentState& state,
                                 const MasterGateOverride* override_gates = nullptr);

enum class CellKind { lstm, onlstm };

struct RecurrentStackConfig {
  CellKind cell = CellKind::onlstm;
  std::size_t layers = 1;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t chunk = 1;
  /// Adds each layer's input to its output for layers after the first.
  bool residual = false;
  bool reversed_master_input = false;
};

/// K stacked unidirectional recurrent layers.
class RecurrentStack {
 public:
  RecurrentStack() = default;
  RecurrentStack(ParameterSet& params, const std::string& prefix, const RecurrentStackConfig& config, Rng& rng);

  const RecurrentStackConfig& config() const noexcept { return config_; }
  std::size_t layers() const noexcept { return config_.layers; }
  const LstmParams& lstm_layer(std::size_t i) const { return lstm_.at(i); }
  const OnLstmParams& onlstm_layer(std::size_t i) const { return onlstm_.at(i); }

  /// Runs over per-step inputs ([batch x input_dim] each). Padded steps of
  /// shorter sequences hold their state, so the final step carries each
  /// sequence's last real hidden state. Returns the top layer per step.
  std::vector<Tensor> run_steps(std::span<const Tensor> steps, const SequenceLayout& layout,
                                const ForwardContext& ctx,
                                std::vector<std::vector<GateTrace>>* traces = nullptr) const;

  /// Batch-major variant: [batch*length x input_dim] -> [batch*length x hidden].
  Tensor run(const Tensor& x, const SequenceLayout& layout, const ForwardContext& ctx,
             std::vector<std::vector<GateTrace>>* traces = nullptr) const;

 private:
  RecurrentStackConfig config_;
  std::vector<LstmParams> lstm_;
  std::vector<OnLstmParams> onlstm_;
};

/// Single sequence convenience: inputs [N x d] -> top-layer hidden [N x d].
Tensor run_recurrent_encoder(const RecurrentStack& stack, const Tensor& inputs, const ForwardContext& ctx = {});

/// Chunk-level master gates as CSV rows: expr,layer,step,token,chunk,f_master,i_master
/// (batch row 0 of each step).
void write_gate_trace_csv(std::ostream& out, std::size_t expr_index,
                          const std::vector<std::vector<GateTrace>>& traces, std::span<const std::string> tokens);

}  // namespace hybrid
