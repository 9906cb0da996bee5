#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hybrid/model.hpp"
#include "hybrid/optim.hpp"

namespace hybrid {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 128;
  double learning_rate = 1e-4;
  double clip_norm = 5.0;
  std::uint64_t seed = 42;
  /// Training and model selection only see pairs with at most this many operators.
  int train_max_ops = 6;
  /// Keep at most this many training pairs after filtering; 0 keeps all.
  std::size_t train_limit = 0;
  /// Groups similar lengths into batches to cut padding.
  bool bucket_by_length = true;
  std::size_t eval_batch_size = 256;

  void validate() const;
};

struct MetricRow {
  std::size_t epoch;
  std::string split;
  std::string metric;
  double value;
};

struct RunMetrics {
  std::vector<MetricRow> rows;
  double first_batch_loss = 0;
  double initial_dev_accuracy = 0;
  double best_dev_accuracy = 0;
  std::size_t best_epoch = 0;
  std::size_t steps = 0;
  /// Kept out of the CSV so that equal seeds give byte-identical files.
  double wall_clock_seconds = 0;

  void add(std::size_t epoch, std::string split, std::string metric, double value);
  /// epoch,split,metric,value with values at full precision.
  std::string to_csv() const;
};

struct TrainHooks {
  /// Called after an epoch improves dev accuracy, with parameters at the new best.
  std::function<void(const PairModel&, std::size_t epoch, double dev_accuracy)> on_improvement;
  std::function<void(std::size_t epoch, double train_loss, double dev_accuracy)> on_epoch;
  /// Ends training after the current epoch when it returns true.
  std::function<bool(std::size_t epoch, double dev_accuracy)> stop;
};

std::vector<logic::LabeledPair> filter_by_ops(std::span<const logic::LabeledPair> pairs, int max_ops);

/// Mini-batch order for one epoch: a shuffled permutation, optionally sorted
/// by length inside windows of several batches, then batches shuffled.
std::vector<std::vector<std::size_t>> epoch_batches(std::span<const logic::LabeledPair> pairs, std::size_t batch_size,
                                                    bool bucket_by_length, Rng& rng);

double accuracy(std::span<const int> predicted, std::span<const logic::LabeledPair> gold);

/// Adam with gradient-norm clipping; dev accuracy on pairs within the
/// operator cap selects the epoch. The model ends holding the best parameters.
/// A non-finite loss raises NumericalError naming the step.
RunMetrics train(PairModel& model, std::span<const logic::LabeledPair> train_pairs,
                 std::span<const logic::LabeledPair> dev_pairs, const TrainConfig& config,
                 const TrainHooks& hooks = {});

// Length generalization report

using Predictor = std::function<std::vector<int>(std::span<const logic::LabeledPair>)>;

struct BinResult {
  std::string bin;  // "1".."12", "le6" or "ge7"
  std::size_t n = 0;
  double accuracy = 0;
  /// Share of the most frequent gold label inside the bin.
  double majority_baseline = 0;
};

struct LengthReport {
  std::vector<BinResult> bins;  // non-empty bins in increasing order
  BinResult short_aggregate;    // le6
  BinResult long_aggregate;     // ge7

  const BinResult* find(int bin) const;
  /// bin,n,accuracy,majority_baseline; empty aggregates leave the ratios blank.
  std::string to_csv() const;
  /// Fixed-width human-readable table.
  std::string table() const;
};

LengthReport evaluate_by_length(std::span<const logic::LabeledPair> pairs, const Predictor& predict);

}  // namespace hybrid
