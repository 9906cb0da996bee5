#pragma once

#include <span>
#include <vector>

#include "hybrid/rng.hpp"
#include "hybrid/tensor.hpp"

namespace hybrid {

/// Padded batch of sequences stored batch-major: row b * length + t of a
/// [batch * length x d] matrix is step t of sequence b.
struct SequenceLayout {
  std::size_t batch = 1;
  std::size_t length = 1;
  std::vector<std::size_t> lengths;  // per sequence, each in [1, length]

  static SequenceLayout single(std::size_t length) { return {1, length, {length}}; }
  std::size_t rows() const { return batch * length; }
  bool padded() const;
  void validate() const;
};

// Linear algebra
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// x[... x n] + bias[n]; the only broadcasting operation.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Elementwise
enum class ElementwiseOp { add, sub, mul, sigmoid, tanh, relu };
Tensor elementwise(ElementwiseOp op, std::span<const Tensor> operands);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
/// alpha * x + beta
Tensor affine(const Tensor& x, Real alpha, Real beta);
inline Tensor scale(const Tensor& x, Real alpha) { return affine(x, alpha, 0); }
inline Tensor one_minus(const Tensor& x) { return affine(x, -1, 1); }
Tensor sum(const Tensor& x);

// Row-wise (last dimension)
Tensor softmax_rows(const Tensor& x);
Tensor cumsum_last(const Tensor& x);
Tensor reverse_last(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps = Real(1e-6));

// Regularization and loss
/// Inverted dropout. Identity when not training or when rate is 0.
Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng);
/// Mean negative log-likelihood of `labels` under softmax(logits).
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Training-time switches threaded through every forward pass.
struct ForwardContext {
  bool training = false;
  double dropout = 0.0;
  Rng* dropout_rng = nullptr;  // required when training with dropout > 0

  Tensor apply_dropout(const Tensor& x) const;
};

// Reshaping and indexing
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
/// out[i] = table[index[i]] row-wise; backs embedding lookup and row selection.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> index);
/// Each column repeated `times` times consecutively: [r x m] -> [r x m*times].
Tensor repeat_cols(const Tensor& x, std::size_t times);
/// Row r: mask[r] * a + (1 - mask[r]) * b. The mask is a constant.
Tensor blend_rows(const Tensor& a, const Tensor& b, std::span<const Real> mask);
/// Stacks per-step [batch x d] tensors into the batch-major layout.
Tensor interleave_steps(std::span<const Tensor> steps);
/// Extracts step t of every sequence: [batch * length x d] -> [batch x d].
Tensor step_rows(const Tensor& x, std::size_t batch, std::size_t length, std::size_t t);

// Attention
struct AttentionProbe {
  /// Filled with softmax weights, indexed [batch][head][query][key].
  std::vector<Real> weights;
};

/// Multi-head scaled dot-product attention over a padded batch. Heads are
/// contiguous column blocks of q, k and v; padded keys receive zero weight.
Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, const SequenceLayout& layout,
                        std::size_t heads, AttentionProbe* probe = nullptr);
/// Each of the learned query rows attends over the valid rows of every
/// sequence; results are concatenated: [batch x queries * d].
Tensor attention_pool(const Tensor& queries, const Tensor& x, const SequenceLayout& layout);

}  // namespace hybrid
