// Acceptance driver: one PASS/FAIL line per criterion, tolerances pinned here.
//
//   acceptance [--full] [--only 1,2,...] [--work DIR]
//
// Without --full, criterion 6 runs the reduced setting (width 64, 625 pairs
// per bin, 10 epochs, one seed) and checks part (a) only.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hybrid/checkpoint.hpp"
#include "hybrid/diagnostics.hpp"

using namespace hybrid;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr double kMechanismTol = 1e-6;
constexpr int kMechanismSteps = 1000;
constexpr double kMechanismBudget = 60;
constexpr int kCumaxVectors = 1000;
constexpr double kShortCutTol = 1e-6;
constexpr int kShortCutPasses = 50;
constexpr double kGradTol = 1e-3;
constexpr double kGradBudget = 600;
constexpr int kOraclePairs = 100000;
constexpr double kOracleBudget = 120;
constexpr double kMajorityMargin = 0.20;
constexpr double kSanMargin = 0.03;
constexpr double kTinyBudget = 600;
constexpr std::size_t kOverfitExamples = 32;
constexpr std::size_t kOverfitEpochs = 100;

struct Outcome {
  bool passed = false;
  std::string detail;
};

double elapsed(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

void info(const std::string& line) { std::printf("    %s\n", line.c_str()); }

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data()) v = static_cast<Real>(rng.uniform(lo, hi));
  return t;
}

// ---------------------------------------------------------------- criterion 1

double sigmoid_ref(double z) { return 1 / (1 + std::exp(-z)); }

std::vector<double> cumax_ref(const std::vector<double>& z) {
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  std::vector<double> e(z.size());
  double s = 0;
  for (std::size_t i = 0; i < z.size(); ++i) s += e[i] = std::exp(z[i] - mx);
  double run = 0;
  for (auto& v : e) v = run += v / s;
  return e;
}

// One batch row of the ordered-neurons update in plain loops.
void onlstm_ref(const OnLstmParams& p, const Tensor& x, const RecurrentState& s, std::size_t r,
                std::vector<double>& h, std::vector<double>& c) {
  const std::size_t n = p.lstm.hidden_dim, in = p.lstm.input_dim, levels = p.levels();
  auto affine = [&](const Tensor& wx, const Tensor& wh, const Tensor& b, std::size_t out) {
    std::vector<double> y(out);
    for (std::size_t j = 0; j < out; ++j) {
      double acc = b.at(j);
      for (std::size_t k = 0; k < in; ++k) acc += double(x.at(r, k)) * wx.at(k * out + j);
      for (std::size_t k = 0; k < n; ++k) acc += double(s.h.at(r, k)) * wh.at(k * out + j);
      y[j] = acc;
    }
    return y;
  };
  const auto pre = affine(p.lstm.w_input, p.lstm.w_hidden, p.lstm.bias, 4 * n);
  const auto ml = affine(p.w_master_input, p.w_master_hidden, p.master_bias, 2 * levels);
  const auto mf = cumax_ref({ml.begin(), ml.begin() + levels});
  const auto mi = cumax_ref({ml.begin() + levels, ml.end()});
  h.assign(n, 0);
  c.assign(n, 0);
  for (std::size_t k = 0; k < n; ++k) {
    const double f = sigmoid_ref(pre[k]), i = sigmoid_ref(pre[n + k]), o = sigmoid_ref(pre[2 * n + k]);
    const double g = std::tanh(pre[3 * n + k]);
    const double ft = mf[k / p.chunk], it = 1 - mi[k / p.chunk];
    const double w = ft * it;
    const double fh = f * w + (ft - w), ih = i * w + (it - w);
    c[k] = fh * s.c.at(r, k) + ih * g;
    h[k] = o * std::tanh(c[k]);
  }
}

Outcome criterion_mechanism() {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(101);
  ParameterSet ps;
  const std::size_t in = 6, n = 12, chunk = 3, batch = 4;
  OnLstmParams p = OnLstmParams::create(ps, "c1", in, n, chunk, rng);
  for (const auto& item : ps.items())
    for (auto& v : Tensor(item.tensor).data()) v = static_cast<Real>(rng.uniform(-1, 1));
  double worst_ref = 0, worst_identity = 0;
  bool lstm_path_exact = true, passthrough_exact = true;
  int steps = 0;
  while (steps < kMechanismSteps) {
    const Tensor x = random_tensor({batch, in}, rng, -2, 2);
    RecurrentState s{random_tensor({batch, n}, rng), random_tensor({batch, n}, rng, -2, 2), nullptr};
    s.trace = std::make_shared<std::vector<GateTrace>>();
    const RecurrentState next = on_lstm_cell_step(p, x, s);
    const GateTrace& g = s.trace->back();
    for (std::size_t r = 0; r < batch; ++r) {
      std::vector<double> h, c;
      onlstm_ref(p, x, s, r, h, c);
      for (std::size_t k = 0; k < n; ++k) {
        worst_ref = std::max({worst_ref, std::abs(next.h.at(r, k) - h[k]), std::abs(next.c.at(r, k) - c[k])});
      }
    }
    for (std::size_t e = 0; e < batch * n; ++e) {
      const double lhs = g.forget_hat.at(e) + g.input_hat.at(e);
      const double rhs = g.master_forget.at(e) + g.master_input.at(e) +
                         (g.forget.at(e) + g.input.at(e) - 2) * g.overlap.at(e);
      worst_identity = std::max(worst_identity, std::abs(lhs - rhs));
    }
    // w = 1: both master gates saturated at one.
    const MasterGateOverride ones{Tensor::full({batch, n}, 1), Tensor::full({batch, n}, 1)};
    const RecurrentState forced = on_lstm_cell_step(p, x, RecurrentState{s.h, s.c, nullptr}, &ones);
    const RecurrentState plain = lstm_cell_step(p.lstm, x, RecurrentState{s.h, s.c, nullptr});
    lstm_path_exact = lstm_path_exact && forced.c.values() == plain.c.values() && forced.h.values() == plain.h.values();
    // w = 0: disjoint master gates pass straight through.
    std::vector<Real> fv(batch * n), iv(batch * n);
    const std::size_t split = rng.below(n + 1);
    for (std::size_t e = 0; e < batch * n; ++e) {
      fv[e] = (e % n) < split ? 0 : 1;
      iv[e] = 1 - fv[e];
    }
    const MasterGateOverride disjoint{Tensor::from({batch, n}, fv), Tensor::from({batch, n}, iv)};
    RecurrentState traced{s.h, s.c, std::make_shared<std::vector<GateTrace>>()};
    on_lstm_cell_step(p, x, traced, &disjoint);
    passthrough_exact = passthrough_exact && traced.trace->back().forget_hat.values() == fv &&
                        traced.trace->back().input_hat.values() == iv;
    steps += static_cast<int>(batch);
  }
  const double seconds = elapsed(start);
  Outcome o;
  o.passed = worst_ref <= kMechanismTol && worst_identity <= kMechanismTol && lstm_path_exact && passthrough_exact &&
             seconds < kMechanismBudget;
  o.detail = std::to_string(steps) + " steps, reference " + fmt("%.2e", worst_ref) + ", identity " +
             fmt("%.2e", worst_identity) + ", w=1 lstm path " + (lstm_path_exact ? "exact" : "differs") +
             ", w=0 passthrough " + (passthrough_exact ? "exact" : "differs") + ", " + fmt("%.1fs", seconds);
  return o;
}

// ---------------------------------------------------------------- criterion 2

Outcome criterion_cumax() {
  const double probs[] = {0.1, 0.2, 0.4, 0.2, 0.1};
  std::vector<Real> logits;
  for (double q : probs) logits.push_back(static_cast<Real>(std::log(q)));
  const Tensor c = cumax(Tensor::from({1, 5}, logits));
  const char* expected[] = {"0.1", "0.3", "0.7", "0.9", "1.0"};
  bool example = true;
  std::string printed;
  for (int i = 0; i < 5; ++i) {
    const std::string s = fmt("%.1f", c.at(i));
    example = example && s == expected[i];
    printed += (i ? "," : "") + s;
  }
  Rng rng(202);
  int violations = 0;
  for (int t = 0; t < kCumaxVectors; ++t) {
    const std::size_t m = 1 + rng.below(32);
    const Tensor f = cumax(random_tensor({1, m}, rng, -8, 8));
    for (std::size_t j = 1; j < m; ++j) violations += f.at(j) < f.at(j - 1);
    violations += std::abs(f.at(m - 1) - 1.0) > 1e-6;
    for (Real v : f.data()) violations += !(v > 0);
  }
  return {example && violations == 0, "worked example (" + printed + "), " + std::to_string(kCumaxVectors) +
                                          " random vectors, " + std::to_string(violations) + " violations"};
}

// ---------------------------------------------------------------- criterion 3

Outcome criterion_short_cut() {
  Rng rng(303);
  double worst = 0;
  for (int t = 0; t < kShortCutPasses; ++t) {
    EncoderConfig e;
    e.kind = EncoderKind::hybrid;
    e.recurrent_layers = 1 + rng.below(2);
    e.attention_layers = 1 + rng.below(2);
    e.dim = 16;
    e.heads = 2;
    e.ff_dim = 32;
    e.dropout = 0;
    e.use_short_cut = true;
    ParameterSet ps;
    Rng init = rng.substream("init", static_cast<std::uint64_t>(t));
    const Encoder enc(e, ps, init);
    const std::size_t batch = 1 + rng.below(3), length = 1 + rng.below(9);
    SequenceLayout layout{batch, length, {}};
    for (std::size_t b = 0; b < batch; ++b) layout.lengths.push_back(1 + rng.below(length));
    layout.lengths[0] = length;
    std::vector<int> tokens(batch * length);
    for (auto& tok : tokens) tok = static_cast<int>(rng.below(logic::vocab::size));
    NoGradGuard no_grad;
    const EncoderOutput out = enc.encode(tokens, layout);
    const Tensor diff = sub(out.output, out.attention);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t s = 0; s < layout.lengths[b]; ++s)
        for (std::size_t k = 0; k < e.dim; ++k) {
          const std::size_t row = b * length + s;
          worst = std::max(worst, std::abs(double(diff.at(row, k)) - double(out.recurrent.at(row, k))));
        }
  }
  return {worst <= kShortCutTol,
          std::to_string(kShortCutPasses) + " random hybrid passes, max |H - H_san - H_rnn| " + fmt("%.2e", worst)};
}

// ---------------------------------------------------------------- criterion 4

Outcome criterion_gradcheck() {
  const auto start = std::chrono::steady_clock::now();
  const auto results = run_gradcheck_matrix(kGradTol, 42);
  const double seconds = elapsed(start);
  bool passed = seconds < kGradBudget;
  double worst = 0;
  std::set<EncoderKind> kinds;
  for (const auto& r : results) {
    passed = passed && r.report.passed;
    worst = std::max(worst, r.report.worst_relative_error());
    kinds.insert(r.config.model.encoder.kind);
    info(std::string(r.report.passed ? "ok   " : "FAIL ") + r.config.label + "  worst " +
         fmt("%.2e", r.report.worst_relative_error()));
  }
  passed = passed && kinds.size() == 4;
  return {passed, std::to_string(results.size()) + " cases over " + std::to_string(kinds.size()) +
                      " encoder kinds, worst relative error " + fmt("%.2e", worst) + ", " + fmt("%.1fs", seconds)};
}

// ---------------------------------------------------------------- criterion 5

// Independent evaluator: recursive evaluation under one assignment.
bool eval_expr(const logic::Expr& e, unsigned assignment) {
  using K = logic::Expr::Kind;
  switch (e.kind()) {
    case K::atom:
      return (assignment >> e.atom_index()) & 1u;
    case K::negation:
      return !eval_expr(e.child(), assignment);
    case K::conjunction:
      return eval_expr(e.left(), assignment) && eval_expr(e.right(), assignment);
    case K::disjunction:
      return eval_expr(e.left(), assignment) || eval_expr(e.right(), assignment);
  }
  return false;
}

// Set relations of the two denotations over the 64 assignments.
logic::Relation relation_by_sets(const logic::Expr& p, const logic::Expr& q) {
  bool p_not_q = false, q_not_p = false, both = false, neither = false;
  for (unsigned a = 0; a < 64; ++a) {
    const bool x = eval_expr(p, a), y = eval_expr(q, a);
    p_not_q |= x && !y;
    q_not_p |= y && !x;
    both |= x && y;
    neither |= !x && !y;
  }
  using R = logic::Relation;
  if (!p_not_q && !q_not_p) return R::equivalence;
  if (!p_not_q) return R::forward_entailment;
  if (!q_not_p) return R::reverse_entailment;
  if (!both && !neither) return R::negation;
  if (!both) return R::alternation;
  if (!neither) return R::cover;
  return R::independence;
}

Outcome criterion_oracle() {
  using logic::Expr;
  using R = logic::Relation;
  const auto start = std::chrono::steady_clock::now();
  Rng rng(505);
  std::size_t converse_bad = 0, double_neg_bad = 0, de_morgan_bad = 0, set_bad = 0;
  for (int t = 0; t < kOraclePairs; ++t) {
    const Expr p = logic::sample_expression(rng, static_cast<int>(rng.below(7)));
    const Expr q = logic::sample_expression(rng, static_cast<int>(rng.below(7)));
    const R pq = logic::relate(p, q);
    converse_bad += logic::relate(q, p) != logic::converse(pq);
    double_neg_bad += logic::relate(p, Expr::negation(Expr::negation(p))) != R::equivalence;
    de_morgan_bad += logic::relate(Expr::negation(Expr::conjunction(p, q)),
                                   Expr::disjunction(Expr::negation(p), Expr::negation(q))) != R::equivalence;
    de_morgan_bad += logic::relate(Expr::negation(Expr::disjunction(p, q)),
                                   Expr::conjunction(Expr::negation(p), Expr::negation(q))) != R::equivalence;
    if (t % 10 == 0) set_bad += relation_by_sets(p, q) != pq;
  }
  const double seconds = elapsed(start);
  const std::size_t total = converse_bad + double_neg_bad + de_morgan_bad + set_bad;
  return {total == 0 && seconds < kOracleBudget,
          std::to_string(kOraclePairs) + " pairs: converse " + std::to_string(converse_bad) + ", double negation " +
              std::to_string(double_neg_bad) + ", De Morgan " + std::to_string(de_morgan_bad) +
              ", set-semantics cross-check " + std::to_string(set_bad) + " violations, " + fmt("%.1fs", seconds)};
}

// ---------------------------------------------------------------- criterion 6

struct ModelRun {
  std::string preset;
  std::uint64_t seed;
  LengthReport report;
  double seconds;
};

ModelRun train_and_evaluate(const std::string& name, const logic::Dataset& data, std::uint64_t seed, bool tiny) {
  const auto start = std::chrono::steady_clock::now();
  RunConfig rc = preset(name);
  if (tiny) apply_tiny(rc);
  else rc.train.epochs = 30;
  rc.train.seed = seed;
  PairModel model(rc.model, seed);
  train(model, data.train, data.dev, rc.train);
  ModelRun run{name, seed, {}, 0};
  run.report = evaluate_by_length(data.test, [&](std::span<const logic::LabeledPair> p) {
    return model.predict(p, rc.train.eval_batch_size);
  });
  run.seconds = elapsed(start);
  info(name + " seed " + std::to_string(seed) + ": le6 " + fmt("%.4f", run.report.short_aggregate.accuracy) +
       " (majority " + fmt("%.4f", run.report.short_aggregate.majority_baseline) + "), ge7 " +
       fmt("%.4f", run.report.long_aggregate.accuracy) + ", " + fmt("%.0fs", run.seconds));
  return run;
}

bool beats_majority(const ModelRun& r) {
  return r.report.short_aggregate.accuracy - r.report.short_aggregate.majority_baseline >= kMajorityMargin;
}

Outcome criterion_length_generalization(bool full) {
  const std::vector<std::string> models{"san", "lstm", "onlstm", "hybrid-shortcut"};
  const auto start = std::chrono::steady_clock::now();
  const logic::Dataset data = logic::generate_dataset(
      42, logic::BinSpec::uniform(full ? logic::kDefaultPerBin : kTinyPerBin));
  if (!full) {
    bool all = true;
    std::string detail = "reduced setting, seed 42:";
    for (const auto& m : models) {
      const ModelRun r = train_and_evaluate(m, data, 42, true);
      all = all && beats_majority(r);
      detail += " " + m + " " +
                fmt("%+.3f", r.report.short_aggregate.accuracy - r.report.short_aggregate.majority_baseline);
    }
    const double seconds = elapsed(start);
    return {all && seconds <= kTinyBudget, detail + " over majority on le6 (need +" + fmt("%.2f", kMajorityMargin) +
                                               "), " + fmt("%.0fs", seconds)};
  }
  int seeds_ok = 0;
  std::string detail = "full setting:";
  for (std::uint64_t seed : {1, 2, 3}) {
    std::map<std::string, ModelRun> runs;
    bool a = true;
    for (const auto& m : models) {
      runs.emplace(m, train_and_evaluate(m, data, seed, false));
      a = a && beats_majority(runs.at(m));
    }
    const double hybrid_long = runs.at("hybrid-shortcut").report.long_aggregate.accuracy;
    const bool b = hybrid_long - runs.at("san").report.long_aggregate.accuracy >= kSanMargin &&
                   hybrid_long >= runs.at("lstm").report.long_aggregate.accuracy;
    seeds_ok += a && b;
    detail += " seed " + std::to_string(seed) + " (a) " + (a ? "yes" : "no") + " (b) " + (b ? "yes" : "no") + ";";
  }
  return {seeds_ok >= 2, detail + " " + std::to_string(seeds_ok) + " of 3 seeds satisfy both"};
}

// ---------------------------------------------------------------- criterion 7

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome criterion_reproducibility(const fs::path& work) {
  const auto bins = logic::BinSpec::uniform(100);
  for (const char* run : {"a", "b"}) logic::write_dataset(work / run, logic::generate_dataset(7, bins), 7, bins);
  bool files_equal = true;
  for (const char* f : {"train.tsv", "dev.tsv", "test.tsv", "metadata.json"}) {
    files_equal = files_equal && file_bytes(work / "a" / f) == file_bytes(work / "b" / f) &&
                  !file_bytes(work / "a" / f).empty();
  }
  const logic::Dataset data = logic::generate_dataset(7, bins);
  RunConfig rc = preset("hybrid-shortcut");
  rc.model.encoder.dim = 16;
  rc.model.encoder.ff_dim = 32;
  rc.model.classifier_hidden = 16;
  rc.train.epochs = 2;
  rc.train.batch_size = 32;
  auto run = [&] {
    PairModel model(rc.model, rc.train.seed);
    const std::string csv = train(model, data.train, data.dev, rc.train).to_csv();
    return std::make_pair(csv, model.params().snapshot());
  };
  const auto first = run(), second = run();
  const bool metrics_equal = first.first == second.first && first.second == second.second;
  return {files_equal && metrics_equal && kDoublePrecision,
          std::string("dataset files ") + (files_equal ? "byte-identical" : "differ") + ", RunMetrics and parameters " +
              (metrics_equal ? "identical" : "differ") + (kDoublePrecision ? " (64-bit)" : " (not a 64-bit build)")};
}

// ---------------------------------------------------------------- criterion 8

Outcome criterion_overfit() {
  const logic::Dataset data = logic::generate_dataset(8, logic::BinSpec::parse("1:8,2:8,3:8,4:8"), {1.0, 0.0, 200});
  std::vector<logic::LabeledPair> subset(data.train.begin(), data.train.begin() + kOverfitExamples);
  bool all = true;
  std::string detail;
  for (const char* name : {"san", "lstm", "onlstm", "hybrid-shortcut"}) {
    RunConfig rc = preset(name);
    apply_tiny(rc);
    rc.model.encoder.dropout = 0;
    rc.train.epochs = kOverfitEpochs;
    rc.train.batch_size = 8;
    rc.train.learning_rate = 1e-3;
    PairModel model(rc.model, rc.train.seed);
    TrainHooks hooks;
    std::size_t reached = 0;
    hooks.stop = [&](std::size_t epoch, double acc) {
      if (acc == 1.0 && reached == 0) reached = epoch;
      return reached != 0;
    };
    train(model, subset, subset, rc.train, hooks);
    all = all && reached != 0;
    detail += std::string(detail.empty() ? "" : ", ") + name + " " +
              (reached ? "100% at epoch " + std::to_string(reached) : "not reached");
  }
  return {all, std::to_string(kOverfitExamples) + " examples, width 64: " + detail};
}

}  // namespace

int main(int argc, char** argv) {
  bool full = false;
  std::set<int> only;
  fs::path work = fs::temp_directory_path() / "hybrid_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--full") {
      full = true;
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string item;
      while (std::getline(ss, item, ',')) only.insert(std::stoi(item));
    } else if (a == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else {
      std::fprintf(stderr, "usage: acceptance [--full] [--only 1,2,...] [--work DIR]\n");
      return 1;
    }
  }
  fs::remove_all(work);
  fs::create_directories(work);

  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "mechanism correctness", criterion_mechanism},
      {2, "cumax contract", criterion_cumax},
      {3, "short-cut exactness", criterion_short_cut},
      {4, "differentiability", criterion_gradcheck},
      {5, "oracle soundness", criterion_oracle},
      {6, "length generalization", [&] { return criterion_length_generalization(full); }},
      {7, "reproducibility", [&] { return criterion_reproducibility(work); }},
      {8, "overfit sanity", criterion_overfit},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s criterion %d (%s): %s\n", o.passed ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.passed;
  }
  fs::remove_all(work);
  return failed == 0 ? 0 : 1;
}
