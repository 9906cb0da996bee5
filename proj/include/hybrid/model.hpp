#pragma once

#include <span>
#include <string>
#include <vector>

#include "hybrid/dataset.hpp"
#include "hybrid/encoder.hpp"

namespace hybrid {

enum class PoolingKind { last_hidden, trainable_queries };

/// Recurrent-topped encoders pool their last hidden state; the others use
/// two trainable queries.
PoolingKind pooling_for(EncoderKind kind);
const char* to_string(PoolingKind kind);

/// Row length-1 of every sequence: [batch*length x d] -> [batch x d].
Tensor pool_last_hidden(const Tensor& encoded, const SequenceLayout& layout);
/// Each query row attends over the valid rows: -> [batch x queries*d].
Tensor pool_trainable_queries(const Tensor& queries, const Tensor& encoded, const SequenceLayout& layout);

/// Three affine layers with tanh after the first two.
struct ClassifierParams {
  Tensor w1, b1;
  Tensor w2, b2;
  Tensor w3, b3;

  static ClassifierParams create(ParameterSet& params, const std::string& prefix, std::size_t input_dim,
                                 std::size_t hidden_dim, std::size_t classes, Rng& rng);
};

/// concat(u, v) -> logits. u holds premises and v hypotheses, row-aligned.
Tensor classify_pair(const ClassifierParams& params, const Tensor& u, const Tensor& v,
                     const ForwardContext& ctx = {});

struct ModelConfig {
  EncoderConfig encoder;
  std::size_t classifier_hidden = 512;
  bool keep_parentheses = true;
};

/// Premises and hypotheses of a batch stacked into one padded layout: rows
/// [0, pairs) are premises, [pairs, 2*pairs) hypotheses.
struct PairBatch {
  std::vector<int> tokens;
  SequenceLayout layout;
  std::vector<int> labels;
  std::size_t pairs = 0;
};

PairBatch make_batch(std::span<const logic::LabeledPair* const> examples, bool keep_parentheses);

class PairModel {
 public:
  PairModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  ParameterSet& params() noexcept { return params_; }
  const ParameterSet& params() const noexcept { return params_; }
  const Encoder& encoder() const noexcept { return encoder_; }
  PoolingKind pooling() const noexcept { return pooling_; }
  std::size_t sentence_dim() const;

  /// Pooled sentence vectors for every sequence of the layout.
  Tensor sentence_vectors(const std::vector<int>& tokens, const SequenceLayout& layout, const ForwardContext& ctx,
                          EncoderDiagnostics* diagnostics = nullptr) const;
  Tensor logits(const PairBatch& batch, const ForwardContext& ctx = {}) const;

  /// Argmax labels without recording gradients. Batches fan out over threads.
  std::vector<int> predict(std::span<const logic::LabeledPair> examples, std::size_t batch_size = 256) const;

 private:
  ModelConfig config_;
  ParameterSet params_;
  Encoder encoder_;
  PoolingKind pooling_;
  Tensor queries_;
  ClassifierParams classifier_;
};

}  // namespace hybrid
