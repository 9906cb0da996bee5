#include "hybrid/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace hybrid {

namespace {

// Batches sorted together when bucketing by length.
constexpr std::size_t kBucketWindow = 20;

std::string format_ratio(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

BinResult summarize(std::string name, std::span<const logic::LabeledPair> gold, std::span<const int> predicted) {
  BinResult r;
  r.bin = std::move(name);
  r.n = gold.size();
  if (r.n == 0) return r;
  const auto hist = logic::label_histogram(gold);
  r.majority_baseline = double(*std::max_element(hist.begin(), hist.end())) / double(r.n);
  r.accuracy = accuracy(predicted, gold);
  return r;
}

}  // namespace

void TrainConfig::validate() const {
  std::vector<std::string> problems;
  if (batch_size == 0) problems.push_back("batch_size must be positive");
  if (eval_batch_size == 0) problems.push_back("eval_batch_size must be positive");
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) problems.push_back("learning_rate must be finite and >= 0");
  if (!(clip_norm > 0)) problems.push_back("clip_norm must be positive");
  if (train_max_ops < 1 || train_max_ops > logic::kMaxOperators) problems.push_back("train_max_ops must be in 1..12");
  if (problems.empty()) return;
  std::string msg;
  for (const auto& p : problems) msg += (msg.empty() ? "" : "; ") + p;
  throw ConfigError(msg);
}

void RunMetrics::add(std::size_t epoch, std::string split, std::string metric, double value) {
  rows.push_back({epoch, std::move(split), std::move(metric), value});
}

std::string RunMetrics::to_csv() const {
  std::string out = "epoch,split,metric,value\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + ',' + r.split + ',' + r.metric + ',' + format_ratio(r.value) + '\n';
  }
  return out;
}

std::vector<logic::LabeledPair> filter_by_ops(std::span<const logic::LabeledPair> pairs, int max_ops) {
  std::vector<logic::LabeledPair> out;
  for (const auto& p : pairs)
    if (p.op_count <= max_ops) out.push_back(p);
  return out;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::span<const logic::LabeledPair> pairs, std::size_t batch_size,
                                                    bool bucket_by_length, Rng& rng) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(order));
  if (bucket_by_length) {
    auto length = [&](std::size_t i) {
      return std::max(logic::token_ids(pairs[i].premise, true).size(), logic::token_ids(pairs[i].hypothesis, true).size());
    };
    std::vector<std::size_t> lengths(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) lengths[i] = length(i);
    const std::size_t window = batch_size * kBucketWindow;
    for (std::size_t begin = 0; begin < order.size(); begin += window) {
      const auto first = order.begin() + static_cast<std::ptrdiff_t>(begin);
      const auto last = order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), begin + window));
      std::stable_sort(first, last, [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });
    }
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    const std::size_t end = std::min(order.size(), begin + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (bucket_by_length) rng.shuffle(std::span<std::vector<std::size_t>>(batches));
  return batches;
}

double accuracy(std::span<const int> predicted, std::span<const logic::LabeledPair> gold) {
  if (predicted.size() != gold.size()) throw DimensionError("accuracy: prediction and gold counts differ");
  if (gold.empty()) throw DataError("accuracy of an empty set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) correct += predicted[i] == static_cast<int>(gold[i].label);
  return double(correct) / double(gold.size());
}

RunMetrics train(PairModel& model, std::span<const logic::LabeledPair> train_pairs,
                 std::span<const logic::LabeledPair> dev_pairs, const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  std::vector<logic::LabeledPair> train_set = filter_by_ops(train_pairs, config.train_max_ops);
  if (config.train_limit > 0 && train_set.size() > config.train_limit) {
    train_set.erase(train_set.begin() + static_cast<std::ptrdiff_t>(config.train_limit), train_set.end());
  }
  const std::vector<logic::LabeledPair> dev_set = filter_by_ops(dev_pairs, config.train_max_ops);
  if (train_set.empty()) throw DataError("no training pairs within " + std::to_string(config.train_max_ops) + " operators");
  if (dev_set.empty()) throw DataError("no dev pairs within " + std::to_string(config.train_max_ops) + " operators");

  ParameterSet& params = model.params();
  AdamOptions adam;
  adam.learning_rate = config.learning_rate;
  AdamState state(params, adam);
  const Rng root(config.seed);
  Rng dropout_rng = root.substream("dropout");
  ForwardContext ctx{true, model.config().encoder.dropout, &dropout_rng};

  RunMetrics metrics;
  metrics.initial_dev_accuracy = accuracy(model.predict(dev_set, config.eval_batch_size), dev_set);
  metrics.best_dev_accuracy = metrics.initial_dev_accuracy;
  metrics.add(0, "dev", "accuracy", metrics.initial_dev_accuracy);
  auto best = params.snapshot();

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng shuffle_rng = root.substream("shuffle", epoch);
    const auto batches = epoch_batches(train_set, config.batch_size, config.bucket_by_length, shuffle_rng);
    double loss_sum = 0, norm_sum = 0;
    std::size_t correct = 0;
    for (const auto& indices : batches) {
      std::vector<const logic::LabeledPair*> ptrs;
      for (std::size_t i : indices) ptrs.push_back(&train_set[i]);
      const PairBatch batch = make_batch(ptrs, model.config().keep_parentheses);
      auto& tape = GradTape::current();
      tape.clear();
      params.zero_grad();
      const Tensor logits = model.logits(batch, ctx);
      const Tensor loss = cross_entropy(logits, batch.labels);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        tape.clear();
        params.restore(best);
        throw NumericalError("non-finite loss at step " + std::to_string(metrics.steps + 1) + " (epoch " +
                             std::to_string(epoch) + ")");
      }
      if (metrics.steps == 0) {
        metrics.first_batch_loss = value;
        metrics.add(epoch, "train", "first_batch_loss", value);
      }
      backward(loss);
      tape.clear();
      norm_sum += params.clip_grad_norm(config.clip_norm);
      adam_step(params, state);
      ++metrics.steps;
      loss_sum += value * double(indices.size());
      for (std::size_t r = 0; r < logits.rows(); ++r) {
        std::size_t arg = 0;
        for (std::size_t c = 1; c < logits.cols(); ++c)
          if (logits.at(r, c) > logits.at(r, arg)) arg = c;
        correct += static_cast<int>(arg) == batch.labels[r];
      }
    }
    const double train_loss = loss_sum / double(train_set.size());
    const double dev_acc = accuracy(model.predict(dev_set, config.eval_batch_size), dev_set);
    metrics.add(epoch, "train", "loss", train_loss);
    metrics.add(epoch, "train", "accuracy", double(correct) / double(train_set.size()));
    metrics.add(epoch, "train", "grad_norm", norm_sum / double(batches.size()));
    metrics.add(epoch, "dev", "accuracy", dev_acc);
    if (hooks.on_epoch) hooks.on_epoch(epoch, train_loss, dev_acc);
    if (dev_acc > metrics.best_dev_accuracy || metrics.best_epoch == 0) {
      metrics.best_dev_accuracy = dev_acc;
      metrics.best_epoch = epoch;
      best = params.snapshot();
      if (hooks.on_improvement) hooks.on_improvement(model, epoch, dev_acc);
    }
    if (hooks.stop && hooks.stop(epoch, dev_acc)) break;
  }
  params.restore(best);
  params.clear_grad();
  metrics.add(metrics.best_epoch, "dev", "best_accuracy", metrics.best_dev_accuracy);
  metrics.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return metrics;
}

const BinResult* LengthReport::find(int bin) const {
  const std::string name = std::to_string(bin);
  for (const auto& b : bins)
    if (b.bin == name) return &b;
  return nullptr;
}

std::string LengthReport::to_csv() const {
  std::string out = "bin,n,accuracy,majority_baseline\n";
  auto row = [&](const BinResult& b) {
    out += b.bin + ',' + std::to_string(b.n) + ',';
    if (b.n > 0) out += format_ratio(b.accuracy) + ',' + format_ratio(b.majority_baseline);
    else out += ',';
    out += '\n';
  };
  for (const auto& b : bins) row(b);
  row(short_aggregate);
  row(long_aggregate);
  return out;
}

std::string LengthReport::table() const {
  std::string out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-5s %7s %9s %9s\n", "bin", "n", "accuracy", "majority");
  out += buf;
  auto row = [&](const BinResult& b) {
    if (b.n == 0) std::snprintf(buf, sizeof buf, "%-5s %7zu %9s %9s\n", b.bin.c_str(), b.n, "-", "-");
    else std::snprintf(buf, sizeof buf, "%-5s %7zu %9.4f %9.4f\n", b.bin.c_str(), b.n, b.accuracy, b.majority_baseline);
    out += buf;
  };
  for (const auto& b : bins) row(b);
  row(short_aggregate);
  row(long_aggregate);
  return out;
}

LengthReport evaluate_by_length(std::span<const logic::LabeledPair> pairs, const Predictor& predict) {
  if (pairs.empty()) throw DataError("no examples to evaluate");
  const std::vector<int> predicted = predict(pairs);
  if (predicted.size() != pairs.size()) {
    throw ContractError("predictor returned " + std::to_string(predicted.size()) + " labels for " +
                        std::to_string(pairs.size()) + " pairs");
  }
  LengthReport report;
  std::vector<logic::LabeledPair> short_gold, long_gold;
  std::vector<int> short_pred, long_pred;
  for (int k = 0; k <= logic::kMaxOperators; ++k) {
    std::vector<logic::LabeledPair> gold;
    std::vector<int> pred;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      if (pairs[i].op_count != k) continue;
      gold.push_back(pairs[i]);
      pred.push_back(predicted[i]);
    }
    if (gold.empty()) continue;
    report.bins.push_back(summarize(std::to_string(k), gold, pred));
    auto& g = k <= 6 ? short_gold : long_gold;
    auto& p = k <= 6 ? short_pred : long_pred;
    g.insert(g.end(), gold.begin(), gold.end());
    p.insert(p.end(), pred.begin(), pred.end());
  }
  report.short_aggregate = summarize("le6", short_gold, short_pred);
  report.long_aggregate = summarize("ge7", long_gold, long_pred);
  return report;
}

}  // namespace hybrid
