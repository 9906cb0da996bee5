// Command-line front end: gen-data, train, eval, gradcheck, trace-gates.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "hybrid/checkpoint.hpp"
#include "hybrid/diagnostics.hpp"

namespace fs = std::filesystem;
using namespace hybrid;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
}

std::string histogram_table(const logic::Dataset& data) {
  std::string out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-6s %8s %8s %8s %8s\n", "label", "train", "dev", "test", "all");
  out += buf;
  const auto tr = logic::label_histogram(data.train), dv = logic::label_histogram(data.dev),
             te = logic::label_histogram(data.test);
  for (int i = 0; i < logic::kRelationCount; ++i) {
    std::snprintf(buf, sizeof buf, "%-6s %8zu %8zu %8zu %8zu\n", logic::relation_token(static_cast<logic::Relation>(i)),
                  tr[i], dv[i], te[i], tr[i] + dv[i] + te[i]);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "%-6s %8zu %8zu %8zu %8zu\n", "total", data.train.size(), data.dev.size(),
                data.test.size(), data.train.size() + data.dev.size() + data.test.size());
  out += buf;
  return out;
}

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string preset = "hybrid-shortcut";
  std::string bins;
  std::optional<std::size_t> epochs;
  bool tiny = false;
  std::string data;
  std::string checkpoint;
  std::string test;
  std::string plot;
  std::vector<std::string> exprs;
  std::string fault;
  double tolerance = 1e-3;
};

int cmd_gen_data(const Options& o) {
  const std::uint64_t seed = o.seed.value_or(42);
  const logic::BinSpec bins =
      o.bins.empty() ? logic::BinSpec::uniform(o.tiny ? kTinyPerBin : logic::kDefaultPerBin) : logic::BinSpec::parse(o.bins);
  const logic::Dataset data = logic::generate_dataset(seed, bins);
  logic::write_dataset(o.out, data, seed, bins);
  std::cout << histogram_table(data);
  return 0;
}

RunConfig resolve_train_config(const Options& o) {
  RunConfig config = preset(o.preset);
  if (o.tiny) apply_tiny(config);
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw ConfigError("cannot open " + o.config);
    std::stringstream buf;
    buf << in.rdbuf();
    config = merge_run_config(config, buf.str());
  }
  if (o.seed) config.train.seed = *o.seed;
  if (o.epochs) config.train.epochs = *o.epochs;
  config.model.encoder = config.model.encoder.resolved();
  config.model.encoder.validate();
  config.train.validate();
  return config;
}

int cmd_train(const Options& o) {
  const RunConfig config = resolve_train_config(o);
  const fs::path data(o.data), out(o.out);
  const auto train_pairs = logic::read_examples(data / "train.tsv");
  const auto dev_pairs = logic::read_examples(data / "dev.tsv");
  make_dir(out);
  write_text(out / "config.json", to_json(config));

  PairModel model(config.model, config.train.seed);
  std::fprintf(stderr, "model %s, %zu parameters, %zu training pairs\n", to_string(config.model.encoder.kind),
               model.params().scalar_count(), train_pairs.size());
  TrainHooks hooks;
  hooks.on_epoch = [](std::size_t epoch, double loss, double dev) {
    std::fprintf(stderr, "epoch %3zu  loss %.4f  dev %.4f\n", epoch, loss, dev);
  };
  hooks.on_improvement = [&](const PairModel& m, std::size_t, double) {
    save_checkpoint(out / "best.ckpt", m, config);
  };
  RunMetrics metrics;
  try {
    metrics = train(model, train_pairs, dev_pairs, config.train, hooks);
  } catch (const NumericalError&) {
    if (!fs::exists(out / "best.ckpt")) save_checkpoint(out / "best.ckpt", model, config);
    throw;
  }
  save_checkpoint(out / "best.ckpt", model, config);
  write_text(out / "metrics.csv", metrics.to_csv());
  char timing[128];
  std::snprintf(timing, sizeof timing, "{\"wall_clock_seconds\": %.3f, \"steps\": %zu}\n", metrics.wall_clock_seconds,
                metrics.steps);
  write_text(out / "timing.json", timing);
  std::printf("best dev accuracy %.4f at epoch %zu\n", metrics.best_dev_accuracy, metrics.best_epoch);

  if (fs::exists(data / "test.tsv")) {
    const auto test_pairs = logic::read_examples(data / "test.tsv");
    if (!test_pairs.empty()) {
      const LengthReport report = evaluate_by_length(
          test_pairs, [&](std::span<const logic::LabeledPair> p) { return model.predict(p, config.train.eval_batch_size); });
      write_text(out / "per_bin.csv", report.to_csv());
      std::cout << report.table();
    }
  }
  return 0;
}

int cmd_eval(const Options& o) {
  const LoadedCheckpoint loaded = load_checkpoint(o.checkpoint);
  const auto test_pairs = logic::read_examples(o.test);
  if (test_pairs.empty()) throw DataError("no examples in " + o.test);
  const LengthReport report = evaluate_by_length(test_pairs, [&](std::span<const logic::LabeledPair> p) {
    return loaded.model->predict(p, loaded.config.train.eval_batch_size);
  });
  if (!o.out.empty()) {
    make_dir(o.out);
    write_text(fs::path(o.out) / "per_bin.csv", report.to_csv());
  }
  if (!o.plot.empty()) {
    std::string plot = "operators,accuracy,majority_baseline\n";
    char buf[96];
    for (const auto& b : report.bins) {
      std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f\n", b.bin.c_str(), b.accuracy, b.majority_baseline);
      plot += buf;
    }
    write_text(o.plot, plot);
  }
  std::cout << report.table();
  return 0;
}

int cmd_gradcheck(const Options& o) {
  if (!kDoublePrecision) throw ConfigError("gradient checking needs the 64-bit build (hybrid64)");
  if (!o.fault.empty()) testing_hooks::set_gradient_fault(o.fault);
  bool passed = true;
  std::string report;
  Rng rng(o.seed.value_or(42));
  for (const auto& op : checked_operations()) {
    const OperationCheck c = check_operation(op, rng, 3, o.tolerance);
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s op %-16s worst %.3e%s%s\n", c.passed ? "PASS" : "FAIL", op.c_str(),
                  c.worst_relative_error, c.failure.empty() ? "" : "  ", c.failure.c_str());
    report += buf;
    passed = passed && c.passed;
  }
  const auto results = run_gradcheck_matrix(o.tolerance, o.seed.value_or(42));
  report += format_gradcheck_report(results, o.tolerance);
  for (const auto& r : results) passed = passed && r.report.passed;
  if (!o.fault.empty()) report += "injected gradient fault: " + o.fault + "\n";
  std::cout << report;
  if (!o.out.empty()) {
    make_dir(o.out);
    write_text(fs::path(o.out) / "gradcheck.txt", report);
  }
  if (!passed) {
    std::cerr << "gradient check failed" << (o.fault.empty() ? "" : " (injected fault in " + o.fault + ")") << "\n";
    return static_cast<int>(ExitCode::numerical);
  }
  return 0;
}

int cmd_trace_gates(const Options& o) {
  const LoadedCheckpoint loaded = load_checkpoint(o.checkpoint);
  if (o.exprs.empty()) throw ConfigError("trace-gates needs at least one --expr");
  std::ostringstream csv;
  trace_gates(*loaded.model, o.exprs, csv);
  if (o.out.empty()) {
    std::cout << csv.str();
  } else {
    make_dir(o.out);
    write_text(fs::path(o.out) / "gates.csv", csv.str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid recurrent/self-attention encoders on propositional-logic inference"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen-data", "Generate train/dev/test splits and metadata");
  gen->add_option("--seed", o.seed, "Random seed (default 42)");
  gen->add_option("--bins", o.bins, "'default' or bin:count list such as 1:100,2:50");
  gen->add_flag("--tiny", o.tiny, "625 pairs per bin");
  gen->add_option("--out", o.out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train a model and keep the best dev checkpoint");
  tr->add_option("--preset", o.preset, "san, lstm, onlstm, hybrid, hybrid-shortcut, hybrid-3l3l")
      ->capture_default_str();
  tr->add_option("--config", o.config, "JSON overriding preset fields");
  tr->add_option("--seed", o.seed, "Random seed (default 42)");
  tr->add_option("--epochs", o.epochs, "Override the epoch count");
  tr->add_flag("--tiny", o.tiny, "Width 64, 10 epochs");
  tr->add_option("--data", o.data, "Directory holding train.tsv and dev.tsv")->required();
  tr->add_option("--out", o.out, "Output directory")->required();

  auto* ev = app.add_subcommand("eval", "Per-operator-count accuracy of a checkpoint");
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  ev->add_option("--test", o.test, "Test file")->required();
  ev->add_option("--out", o.out, "Directory for per_bin.csv");
  ev->add_option("--plot", o.plot, "Also write operators,accuracy,majority_baseline CSV here");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every operation and encoder kind");
  gc->add_option("--seed", o.seed, "Random seed (default 42)");
  gc->add_option("--tolerance", o.tolerance, "Relative error bound")->capture_default_str();
  gc->add_option("--inject-fault", o.fault, "Negate the gradient of the named operation");
  gc->add_option("--out", o.out, "Directory for gradcheck.txt");

  auto* tg = app.add_subcommand("trace-gates", "Dump chunk-level master gates per step");
  tg->add_option("--checkpoint", o.checkpoint, "Checkpoint with an ON-LSTM stage")->required();
  tg->add_option("--expr", o.exprs, "Expression to encode (repeatable)")->required();
  tg->add_option("--out", o.out, "Directory for gates.csv (stdout otherwise)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : static_cast<int>(ExitCode::usage);
  }

  try {
    if (*gen) return cmd_gen_data(o);
    if (*tr) return cmd_train(o);
    if (*ev) return cmd_eval(o);
    if (*gc) return cmd_gradcheck(o);
    if (*tg) return cmd_trace_gates(o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::usage);
  }
  return static_cast<int>(ExitCode::usage);
}
