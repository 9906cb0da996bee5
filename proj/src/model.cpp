#include "hybrid/model.hpp"

#include <algorithm>
#include <cmath>

namespace hybrid {

PoolingKind pooling_for(EncoderKind kind) {
  return kind == EncoderKind::lstm || kind == EncoderKind::onlstm ? PoolingKind::last_hidden
                                                                   : PoolingKind::trainable_queries;
}

const char* to_string(PoolingKind kind) {
  return kind == PoolingKind::last_hidden ? "last_hidden" : "trainable_queries";
}

Tensor pool_last_hidden(const Tensor& encoded, const SequenceLayout& layout) {
  layout.validate();
  if (encoded.rows() != layout.rows()) throw DimensionError("pool_last_hidden: rows do not match layout");
  std::vector<std::size_t> index(layout.batch);
  for (std::size_t b = 0; b < layout.batch; ++b) index[b] = b * layout.length + layout.lengths[b] - 1;
  return gather_rows(encoded, index);
}

Tensor pool_trainable_queries(const Tensor& queries, const Tensor& encoded, const SequenceLayout& layout) {
  return attention_pool(queries, encoded, layout);
}

ClassifierParams ClassifierParams::create(ParameterSet& params, const std::string& prefix, std::size_t input_dim,
                                          std::size_t hidden_dim, std::size_t classes, Rng& rng) {
  ClassifierParams c;
  c.w1 = params.uniform(prefix + ".w1", {input_dim, hidden_dim}, rng);
  c.b1 = params.zeros(prefix + ".b1", {hidden_dim});
  c.w2 = params.uniform(prefix + ".w2", {hidden_dim, hidden_dim}, rng);
  c.b2 = params.zeros(prefix + ".b2", {hidden_dim});
  c.w3 = params.uniform(prefix + ".w3", {hidden_dim, classes}, rng);
  c.b3 = params.zeros(prefix + ".b3", {classes});
  return c;
}

Tensor classify_pair(const ClassifierParams& p, const Tensor& u, const Tensor& v, const ForwardContext& ctx) {
  if (u.shape() != v.shape()) {
    throw DimensionError("classify_pair: sentence vectors " + shape_to_string(u.shape()) + " and " +
                         shape_to_string(v.shape()));
  }
  const Tensor parts[] = {u, v};
  const Tensor h1 = ctx.apply_dropout(tanh(linear(concat_cols(parts), p.w1, p.b1)));
  const Tensor h2 = ctx.apply_dropout(tanh(linear(h1, p.w2, p.b2)));
  return linear(h2, p.w3, p.b3);
}

PairBatch make_batch(std::span<const logic::LabeledPair* const> examples, bool keep_parentheses) {
  PairBatch batch;
  batch.pairs = examples.size();
  if (batch.pairs == 0) throw DataError("empty batch");
  std::vector<std::vector<int>> sequences;
  sequences.reserve(2 * batch.pairs);
  for (const auto* e : examples) sequences.push_back(logic::token_ids(e->premise, keep_parentheses));
  for (const auto* e : examples) sequences.push_back(logic::token_ids(e->hypothesis, keep_parentheses));
  std::size_t length = 0;
  for (const auto& s : sequences) length = std::max(length, s.size());
  batch.layout = {sequences.size(), length, {}};
  batch.tokens.assign(sequences.size() * length, logic::vocab::pad);
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    batch.layout.lengths.push_back(sequences[i].size());
    std::copy(sequences[i].begin(), sequences[i].end(), batch.tokens.begin() + static_cast<std::ptrdiff_t>(i * length));
  }
  for (const auto* e : examples) batch.labels.push_back(static_cast<int>(e->label));
  return batch;
}

PairModel::PairModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.encoder = config.encoder.resolved();
  config_.encoder.validate();
  if (config_.encoder.vocab_size < logic::vocab::size) {
    throw ConfigError("vocab_size " + std::to_string(config_.encoder.vocab_size) + " is below the logic vocabulary of " +
                      std::to_string(logic::vocab::size));
  }
  if (config_.classifier_hidden == 0) throw ConfigError("classifier_hidden must be positive");
  Rng rng = Rng(seed).substream("init");
  encoder_ = Encoder(config_.encoder, params_, rng);
  pooling_ = pooling_for(config_.encoder.kind);
  const std::size_t d = config_.encoder.dim;
  if (pooling_ == PoolingKind::trainable_queries) {
    queries_ = params_.uniform("pool.queries", {2, d}, Real(1 / std::sqrt(double(d))), rng);
  }
  classifier_ = ClassifierParams::create(params_, "classifier", 2 * sentence_dim(), config_.classifier_hidden,
                                         logic::kRelationCount, rng);
}

std::size_t PairModel::sentence_dim() const {
  return pooling_ == PoolingKind::last_hidden ? config_.encoder.dim : 2 * config_.encoder.dim;
}

Tensor PairModel::sentence_vectors(const std::vector<int>& tokens, const SequenceLayout& layout,
                                   const ForwardContext& ctx, EncoderDiagnostics* diagnostics) const {
  const Tensor encoded = encoder_.encode(tokens, layout, ctx, diagnostics).output;
  return pooling_ == PoolingKind::last_hidden ? pool_last_hidden(encoded, layout)
                                              : pool_trainable_queries(queries_, encoded, layout);
}

Tensor PairModel::logits(const PairBatch& batch, const ForwardContext& ctx) const {
  const Tensor s = sentence_vectors(batch.tokens, batch.layout, ctx);
  std::vector<std::size_t> premise(batch.pairs), hypothesis(batch.pairs);
  for (std::size_t i = 0; i < batch.pairs; ++i) {
    premise[i] = i;
    hypothesis[i] = batch.pairs + i;
  }
  return classify_pair(classifier_, gather_rows(s, premise), gather_rows(s, hypothesis), ctx);
}

std::vector<int> PairModel::predict(std::span<const logic::LabeledPair> examples, std::size_t batch_size) const {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<int> out(examples.size(), 0);
  const long long batches = static_cast<long long>((examples.size() + batch_size - 1) / batch_size);
#pragma omp parallel for schedule(dynamic)
  for (long long bi = 0; bi < batches; ++bi) {
    NoGradGuard no_grad;
    const std::size_t begin = static_cast<std::size_t>(bi) * batch_size;
    const std::size_t end = std::min(examples.size(), begin + batch_size);
    std::vector<const logic::LabeledPair*> ptrs;
    for (std::size_t i = begin; i < end; ++i) ptrs.push_back(&examples[i]);
    const Tensor z = logits(make_batch(ptrs, config_.keep_parentheses));
    for (std::size_t r = 0; r < z.rows(); ++r) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < z.cols(); ++c)
        if (z.at(r, c) > z.at(r, best)) best = c;
      out[begin + r] = static_cast<int>(best);
    }
  }
  return out;
}

}  // namespace hybrid
