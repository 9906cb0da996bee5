#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "doctest.h"
#include "hybrid/checkpoint.hpp"
#include "hybrid/diagnostics.hpp"
#include "test_util.hpp"

using namespace hybrid;
using hybrid::test::max_abs_diff;
using hybrid::test::random_tensor;
namespace fs = std::filesystem;

namespace {

ModelConfig small_model(EncoderKind kind, std::size_t dim = 16) {
  ModelConfig m;
  EncoderConfig& e = m.encoder;
  e.kind = kind;
  e.recurrent_layers = kind == EncoderKind::san ? 0 : 1;
  e.attention_layers = kind == EncoderKind::lstm || kind == EncoderKind::onlstm ? 0 : 1;
  e.dim = dim;
  e.heads = 2;
  e.ff_dim = 2 * dim;
  e.chunk = 0;
  e.dropout = 0;
  e.use_positional = kind == EncoderKind::san;
  e.use_short_cut = kind == EncoderKind::hybrid;
  m.classifier_hidden = 16;
  return m;
}

std::vector<logic::LabeledPair> sample_pairs(std::uint64_t seed, std::size_t n, int max_ops) {
  Rng rng(seed);
  std::vector<logic::LabeledPair> out;
  for (std::size_t i = 0; i < n; ++i) {
    const int a = static_cast<int>(rng.below(static_cast<std::uint64_t>(max_ops) + 1));
    const int b = static_cast<int>(rng.below(static_cast<std::uint64_t>(max_ops) + 1));
    out.push_back(logic::make_pair(logic::sample_expression(rng, a), logic::sample_expression(rng, b)));
  }
  return out;
}

std::vector<const logic::LabeledPair*> pointers(const std::vector<logic::LabeledPair>& pairs) {
  std::vector<const logic::LabeledPair*> out;
  for (const auto& p : pairs) out.push_back(&p);
  return out;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("hybrid_test_pipeline_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("pooling pairing follows the encoder kind") {
  CHECK(pooling_for(EncoderKind::lstm) == PoolingKind::last_hidden);
  CHECK(pooling_for(EncoderKind::onlstm) == PoolingKind::last_hidden);
  CHECK(pooling_for(EncoderKind::san) == PoolingKind::trainable_queries);
  CHECK(pooling_for(EncoderKind::hybrid) == PoolingKind::trainable_queries);
  for (EncoderKind k : {EncoderKind::san, EncoderKind::lstm, EncoderKind::onlstm, EncoderKind::hybrid}) {
    PairModel m(small_model(k), 1);
    CHECK(m.pooling() == pooling_for(k));
    CHECK((m.params().find("pool.queries") != nullptr) == (m.pooling() == PoolingKind::trainable_queries));
  }
}

TEST_CASE("pool_last_hidden picks the last valid row of each sequence") {
  Rng rng(3);
  const Tensor x = random_tensor({5, 8}, rng);
  SUBCASE("single sequence matches manual indexing") {
    const Tensor p = pool_last_hidden(x, SequenceLayout::single(5));
    REQUIRE(p.shape() == Shape{1, 8});
    for (std::size_t c = 0; c < 8; ++c) CHECK(p.at(0, c) == x.at(4, c));
  }
  SUBCASE("N=1 returns the only row") {
    const Tensor one = random_tensor({1, 8}, rng);
    CHECK(max_abs_diff(pool_last_hidden(one, SequenceLayout::single(1)).data(), one.data()) == 0);
  }
  SUBCASE("padded batch") {
    const Tensor y = random_tensor({6, 4}, rng);
    const SequenceLayout layout{2, 3, {2, 3}};
    const Tensor p = pool_last_hidden(y, layout);
    for (std::size_t c = 0; c < 4; ++c) {
      CHECK(p.at(0, c) == y.at(1, c));
      CHECK(p.at(1, c) == y.at(5, c));
    }
  }
  SUBCASE("earlier rows do not matter") {
    Tensor z = x.clone();
    for (std::size_t i = 0; i < 4 * 8; ++i) z.data()[i] += Real(1.5);
    CHECK(max_abs_diff(pool_last_hidden(z, SequenceLayout::single(5)).data(),
                       pool_last_hidden(x, SequenceLayout::single(5)).data()) == 0);
  }
}

TEST_CASE("pool_trainable_queries") {
  Rng rng(4);
  const Tensor queries = random_tensor({2, 6}, rng);
  SUBCASE("single row gives row concatenated with itself") {
    const Tensor row = random_tensor({1, 6}, rng);
    const Tensor p = pool_trainable_queries(queries, row, SequenceLayout::single(1));
    REQUIRE(p.shape() == Shape{1, 12});
    for (std::size_t c = 0; c < 6; ++c) {
      CHECK(p.at(0, c) == doctest::Approx(row.at(0, c)).epsilon(1e-12));
      CHECK(p.at(0, 6 + c) == doctest::Approx(row.at(0, c)).epsilon(1e-12));
    }
  }
  SUBCASE("identical rows give the row regardless of queries") {
    const Tensor row = random_tensor({1, 6}, rng);
    const std::vector<std::size_t> idx(4, 0);
    const Tensor x = gather_rows(row, idx);
    const Tensor p = pool_trainable_queries(random_tensor({2, 6}, rng, -5, 5), x, SequenceLayout::single(4));
    for (std::size_t c = 0; c < 6; ++c) {
      CHECK(p.at(0, c) == doctest::Approx(row.at(0, c)).epsilon(1e-12));
      CHECK(p.at(0, 6 + c) == doctest::Approx(row.at(0, c)).epsilon(1e-12));
    }
  }
  SUBCASE("matches a scalar softmax reference") {
    const Tensor x = random_tensor({3, 6}, rng);
    const Tensor p = pool_trainable_queries(queries, x, SequenceLayout::single(3));
    for (std::size_t q = 0; q < 2; ++q) {
      double w[3], total = 0;
      for (std::size_t t = 0; t < 3; ++t) {
        double s = 0;
        for (std::size_t c = 0; c < 6; ++c) s += queries.at(q, c) * x.at(t, c);
        w[t] = std::exp(s / std::sqrt(6.0));
        total += w[t];
      }
      for (std::size_t c = 0; c < 6; ++c) {
        double v = 0;
        for (std::size_t t = 0; t < 3; ++t) v += w[t] / total * x.at(t, c);
        CHECK(p.at(0, q * 6 + c) == doctest::Approx(v).epsilon(1e-12));
      }
    }
  }
  SUBCASE("gradient reaches the queries") {
    Tensor qv = random_tensor({2, 6}, rng);
    qv.set_requires_grad(true);
    const Tensor x = random_tensor({4, 6}, rng);
    const Tensor w = random_tensor({1, 12}, rng);
    backward(sum(mul(pool_trainable_queries(qv, x, SequenceLayout::single(4)), w)));
    GradTape::current().clear();
    double norm = 0;
    for (Real g : qv.grad()) norm += std::abs(g);
    CHECK(norm > 1e-6);
  }
}

TEST_CASE("classify_pair") {
  Rng rng(5);
  ParameterSet ps;
  const auto c = ClassifierParams::create(ps, "clf", 8, 6, 7, rng);
  CHECK(c.w1.shape() == Shape{8, 6});
  CHECK(c.w3.shape() == Shape{6, 7});

  SUBCASE("zero weights give the output bias for every input") {
    for (const Tensor* w : {&c.w1, &c.w2, &c.w3}) {
      Tensor t = *w;
      for (auto& v : t.data()) v = 0;
    }
    Tensor b3 = c.b3;
    for (std::size_t i = 0; i < 7; ++i) b3.data()[i] = Real(i) * Real(0.25);
    const Tensor z = classify_pair(c, random_tensor({3, 4}, rng), random_tensor({3, 4}, rng));
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t k = 0; k < 7; ++k) CHECK(z.at(r, k) == doctest::Approx(0.25 * double(k)));
  }
  SUBCASE("premise and hypothesis are not interchangeable") {
    const Tensor u = random_tensor({1, 4}, rng), v = random_tensor({1, 4}, rng);
    CHECK(max_abs_diff(classify_pair(c, u, v).data(), classify_pair(c, v, u).data()) > 1e-6);
  }
  SUBCASE("matches a scalar reference") {
    const Tensor u = random_tensor({1, 4}, rng), v = random_tensor({1, 4}, rng);
    std::vector<double> in(8), h1(6), h2(6);
    for (std::size_t i = 0; i < 4; ++i) {
      in[i] = u.at(0, i);
      in[4 + i] = v.at(0, i);
    }
    for (std::size_t j = 0; j < 6; ++j) {
      double s = c.b1.at(j);
      for (std::size_t i = 0; i < 8; ++i) s += in[i] * c.w1.at(i, j);
      h1[j] = std::tanh(s);
    }
    for (std::size_t j = 0; j < 6; ++j) {
      double s = c.b2.at(j);
      for (std::size_t i = 0; i < 6; ++i) s += h1[i] * c.w2.at(i, j);
      h2[j] = std::tanh(s);
    }
    const Tensor z = classify_pair(c, u, v);
    for (std::size_t k = 0; k < 7; ++k) {
      double s = c.b3.at(k);
      for (std::size_t i = 0; i < 6; ++i) s += h2[i] * c.w3.at(i, k);
      CHECK(z.at(0, k) == doctest::Approx(s).epsilon(1e-12));
    }
  }
  SUBCASE("mismatched sentence widths") {
    CHECK_THROWS_AS(classify_pair(c, random_tensor({1, 4}, rng), random_tensor({1, 3}, rng)), DimensionError);
  }
  SUBCASE("gradient check at d=8") {
    ParameterSet ps8;
    const auto c8 = ClassifierParams::create(ps8, "clf", 16, 8, 7, rng);
    Tensor u = ps8.uniform("u", {3, 8}, Real(1), rng);
    Tensor v = ps8.uniform("v", {3, 8}, Real(1), rng);
    const std::vector<int> labels{0, 3, 6};
    const auto report = gradient_check(ps8.items(), [&] { return cross_entropy(classify_pair(c8, u, v), labels); }, 1e-3);
    CHECK(report.passed);
  }
}

TEST_CASE("make_batch stacks premises then hypotheses") {
  const auto pairs = std::vector<logic::LabeledPair>{
      logic::make_pair(logic::parse_expression("a"), logic::parse_expression("( not b )")),
      logic::make_pair(logic::parse_expression("( a ( and c ) )"), logic::parse_expression("d")),
  };
  const PairBatch b = make_batch(pointers(pairs), true);
  CHECK(b.pairs == 2);
  CHECK(b.layout.batch == 4);
  CHECK(b.layout.length == 7);
  CHECK(b.layout.lengths == std::vector<std::size_t>{1, 7, 4, 1});
  CHECK(b.tokens[0] == logic::vocab::first_atom);
  CHECK(b.tokens[1] == logic::vocab::pad);
  CHECK(b.tokens[2 * 7 + 1] == logic::vocab::op_not);
  CHECK(b.labels == std::vector<int>{static_cast<int>(pairs[0].label), static_cast<int>(pairs[1].label)});
  const PairBatch stripped = make_batch(pointers(pairs), false);
  CHECK(stripped.layout.lengths == std::vector<std::size_t>{1, 3, 2, 1});
  CHECK_THROWS_AS(make_batch({}, true), DataError);
}

TEST_CASE("first batch loss is near ln 7 at initialization") {
  const auto pairs = sample_pairs(11, 128, 6);
  const PairBatch batch = make_batch(pointers(pairs), true);
  for (const auto& name : preset_names()) {
    RunConfig rc = preset(name);
    if (name == "hybrid-3l3l") apply_tiny(rc);
    PairModel model(rc.model, 42);
    NoGradGuard no_grad;
    const double loss = cross_entropy(model.logits(batch), batch.labels).item();
    CAPTURE(name);
    CHECK(std::abs(loss - std::log(7.0)) < 0.2);
  }
}

TEST_CASE("learning rate 0 leaves parameters and accuracy unchanged") {
  const auto train_pairs = sample_pairs(21, 64, 4);
  const auto dev_pairs = sample_pairs(22, 40, 4);
  PairModel model(small_model(EncoderKind::hybrid), 7);
  const auto before = model.params().snapshot();
  const double init_acc = accuracy(model.predict(dev_pairs), dev_pairs);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 16;
  tc.learning_rate = 0;
  const RunMetrics m = train(model, train_pairs, dev_pairs, tc);
  CHECK(model.params().snapshot() == before);
  CHECK(m.initial_dev_accuracy == init_acc);
  CHECK(m.best_dev_accuracy == init_acc);
  CHECK(m.steps == 4);
}

TEST_CASE("training is deterministic under a fixed seed") {
  const auto train_pairs = sample_pairs(31, 48, 4);
  const auto dev_pairs = sample_pairs(32, 24, 4);
  ModelConfig mc = small_model(EncoderKind::hybrid);
  mc.encoder.dropout = 0.2;
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 8;
  tc.learning_rate = 1e-3;
  auto run = [&](std::uint64_t seed) {
    tc.seed = seed;
    PairModel model(mc, seed);
    return std::make_pair(train(model, train_pairs, dev_pairs, tc).to_csv(), model.params().snapshot());
  };
  const auto a = run(42), b = run(42), c = run(43);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  CHECK(a.first != c.first);
}

TEST_CASE("training restores the best dev epoch") {
  const auto train_pairs = sample_pairs(41, 48, 3);
  const auto dev_pairs = sample_pairs(42, 48, 3);
  PairModel model(small_model(EncoderKind::lstm), 3);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 16;
  tc.learning_rate = 3e-3;
  std::vector<double> dev;
  TrainHooks hooks;
  hooks.on_epoch = [&](std::size_t, double, double acc) { dev.push_back(acc); };
  const RunMetrics m = train(model, train_pairs, dev_pairs, tc, hooks);
  REQUIRE(dev.size() == 3);
  CHECK(m.best_dev_accuracy == *std::max_element(dev.begin(), dev.end()));
  CHECK(accuracy(model.predict(dev_pairs), dev_pairs) == m.best_dev_accuracy);
  const std::string csv = m.to_csv();
  CHECK(csv.rfind("epoch,split,metric,value\n", 0) == 0);
  CHECK(csv.find("1,train,first_batch_loss,") != std::string::npos);
}

TEST_CASE("training filters by operator count") {
  const auto pairs = sample_pairs(51, 200, 9);
  const auto kept = filter_by_ops(pairs, 6);
  for (const auto& p : kept) CHECK(p.op_count <= 6);
  std::size_t expected = 0;
  for (const auto& p : pairs) expected += p.op_count <= 6;
  CHECK(kept.size() == expected);

  std::vector<logic::LabeledPair> long_only;
  for (const auto& p : pairs)
    if (p.op_count > 6) long_only.push_back(p);
  PairModel model(small_model(EncoderKind::lstm), 1);
  CHECK_THROWS_AS(train(model, long_only, pairs, TrainConfig{}), DataError);
}

TEST_CASE("epoch batches cover every example once") {
  const auto pairs = sample_pairs(61, 103, 6);
  for (bool bucket : {false, true}) {
    Rng rng(9);
    const auto batches = epoch_batches(pairs, 10, bucket, rng);
    CHECK(batches.size() == 11);
    std::vector<int> seen(pairs.size(), 0);
    for (const auto& b : batches)
      for (std::size_t i : b) ++seen[i];
    CHECK(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));
  }
}

TEST_CASE("non-finite loss aborts with the step and keeps the last good values") {
  const auto train_pairs = sample_pairs(71, 32, 3);
  const auto dev_pairs = sample_pairs(72, 16, 3);
  PairModel model(small_model(EncoderKind::lstm), 2);
  Tensor w3 = *model.params().find("classifier.w3");
  w3.data()[0] = std::numeric_limits<Real>::quiet_NaN();
  const auto poisoned = model.params().snapshot();
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 8;
  try {
    train(model, train_pairs, dev_pairs, tc);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("step 1") != std::string::npos);
    CHECK(e.code() == ExitCode::numerical);
  }
  const auto after = model.params().snapshot();
  const auto& items = model.params().items();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].name == "classifier.w3") continue;
    CHECK(after[i] == poisoned[i]);
  }
}

TEST_CASE("evaluate_by_length") {
  const logic::Dataset data = logic::generate_dataset(5, logic::BinSpec::parse("1:60,2:60,3:60,7:60,9:60"),
                                                      {0.0, 0.0, 200});
  const auto& test = data.test;
  REQUIRE(test.size() == 300);

  SUBCASE("oracle predictor scores 1 everywhere") {
    const auto report = evaluate_by_length(test, [](std::span<const logic::LabeledPair> p) {
      std::vector<int> out;
      for (const auto& e : p) out.push_back(static_cast<int>(logic::relate(e.premise, e.hypothesis)));
      return out;
    });
    REQUIRE(report.bins.size() == 5);
    for (const auto& b : report.bins) CHECK(b.accuracy == 1.0);
    CHECK(report.short_aggregate.accuracy == 1.0);
    CHECK(report.long_aggregate.accuracy == 1.0);
    CHECK(report.short_aggregate.n == 180);
    CHECK(report.long_aggregate.n == 120);
    CHECK(report.find(4) == nullptr);
    CHECK(report.find(7) != nullptr);
  }
  SUBCASE("majority baseline matches an independent histogram") {
    const auto report = evaluate_by_length(test, [](std::span<const logic::LabeledPair> p) {
      return std::vector<int>(p.size(), 0);
    });
    for (int k : {1, 2, 3, 7, 9}) {
      std::map<int, int> counts;
      int n = 0;
      for (const auto& e : test) {
        if (e.op_count != k) continue;
        ++counts[static_cast<int>(e.label)];
        ++n;
      }
      int best = 0;
      for (const auto& [label, count] : counts) best = std::max(best, count);
      const BinResult* b = report.find(k);
      REQUIRE(b != nullptr);
      CHECK(b->n == std::size_t(n));
      CHECK(b->majority_baseline == doctest::Approx(double(best) / n));
      CHECK(b->accuracy == doctest::Approx(double(counts[0]) / n));
    }
  }
  SUBCASE("csv and table list non-empty bins plus two aggregates") {
    const auto report = evaluate_by_length(test, [](std::span<const logic::LabeledPair> p) {
      return std::vector<int>(p.size(), 5);
    });
    const std::string csv = report.to_csv();
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 5 + 2);
    CHECK(csv.rfind("bin,n,accuracy,majority_baseline\n", 0) == 0);
    CHECK(csv.find("\nle6,180,") != std::string::npos);
    CHECK(csv.find("\nge7,120,") != std::string::npos);
    const std::string table = report.table();
    CHECK(std::count(table.begin(), table.end(), '\n') == 1 + 5 + 2);
  }
  SUBCASE("absent aggregate is blank rather than zero") {
    const std::vector<logic::LabeledPair> short_only(test.begin(), test.begin() + 60);
    const auto report = evaluate_by_length(short_only, [](std::span<const logic::LabeledPair> p) {
      return std::vector<int>(p.size(), 0);
    });
    CHECK(report.long_aggregate.n == 0);
    CHECK(report.to_csv().find("\nge7,0,,\n") != std::string::npos);
  }
  SUBCASE("empty input and wrong prediction counts") {
    const auto none = [](std::span<const logic::LabeledPair>) { return std::vector<int>{}; };
    CHECK_THROWS_AS(evaluate_by_length({}, none), DataError);
    CHECK_THROWS_AS(evaluate_by_length(test, none), ContractError);
  }
}

TEST_CASE("uniform random predictor sits at chance in every bin") {
  const logic::Dataset data = logic::generate_dataset(8, logic::BinSpec::parse("2:1400,5:1400,8:1400"), {0.0, 0.0, 200});
  Rng rng(123);
  const auto report = evaluate_by_length(data.test, [&](std::span<const logic::LabeledPair> p) {
    std::vector<int> out;
    for (std::size_t i = 0; i < p.size(); ++i) out.push_back(static_cast<int>(rng.below(7)));
    return out;
  });
  for (const auto& b : report.bins) {
    const double sigma = std::sqrt((1.0 / 7) * (6.0 / 7) / double(b.n));
    CAPTURE(b.bin);
    CHECK(std::abs(b.accuracy - 1.0 / 7) < 4 * sigma);
  }
}

TEST_CASE("run config JSON") {
  SUBCASE("round trip preserves every field") {
    RunConfig rc = preset("hybrid-3l3l");
    rc.model.encoder.dropout = 0.125;
    rc.model.encoder.reversed_master_input = true;
    rc.model.keep_parentheses = false;
    rc.train.seed = 9;
    rc.train.learning_rate = 3.5e-4;
    const std::string text = to_json(rc);
    CHECK(to_json(run_config_from_json(text)) == text);
  }
  SUBCASE("unknown keys are rejected by name") {
    try {
      run_config_from_json(R"({"encoder":{"dimm":8}})");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("encoder.dimm") != std::string::npos);
    }
    CHECK_THROWS_AS(run_config_from_json(R"({"optimizer":{}})"), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(R"({"train":{"epochs":-1}})"), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(R"({"train":{"epochs":"3"}})"), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(R"({"encoder":{"kind":"gru"}})"), ConfigError);
    CHECK_THROWS_AS(run_config_from_json("{"), ConfigError);
  }
  SUBCASE("overlay keeps unspecified fields") {
    const RunConfig base = preset("san");
    const RunConfig rc = merge_run_config(base, R"({"encoder":{"dim":32,"ff_dim":64},"train":{"epochs":3}})");
    CHECK(rc.model.encoder.kind == EncoderKind::san);
    CHECK(rc.model.encoder.dim == 32);
    CHECK(rc.model.encoder.attention_layers == 2);
    CHECK(rc.train.epochs == 3);
    CHECK(rc.train.learning_rate == 1e-4);
  }
  SUBCASE("invalid combinations fail validation") {
    CHECK_THROWS_AS(merge_run_config(preset("san"), R"({"encoder":{"heads":3}})"), ConfigError);
  }
}

TEST_CASE("presets") {
  CHECK(preset("hybrid-shortcut").model.encoder.use_short_cut);
  CHECK_FALSE(preset("hybrid").model.encoder.use_short_cut);
  CHECK(preset("hybrid-3l3l").model.encoder.recurrent_layers == 3);
  CHECK(preset("hybrid-3l3l").model.encoder.attention_layers == 3);
  CHECK(preset("san").model.encoder.use_positional);
  CHECK(preset("lstm").model.encoder.kind == EncoderKind::lstm);
  const RunConfig def = preset("hybrid-shortcut");
  CHECK(def.model.encoder.dim == 256);
  CHECK(def.model.encoder.dropout == 0.2);
  CHECK(def.train.learning_rate == 1e-4);
  CHECK(def.train.batch_size == 128);
  CHECK(def.train.seed == 42);
  CHECK(def.model.classifier_hidden == 512);
  CHECK_THROWS_AS(preset("transformer"), ConfigError);
  RunConfig tiny = preset("lstm");
  apply_tiny(tiny);
  CHECK(tiny.model.encoder.dim == 64);
  CHECK(tiny.train.epochs == 10);
}

TEST_CASE("checkpoint round trip") {
  const fs::path dir = scratch_dir("ckpt");
  RunConfig rc;
  rc.model = small_model(EncoderKind::hybrid);
  rc.train.seed = 17;
  PairModel model(rc.model, rc.train.seed);
  // Move the parameters away from their initial values.
  Rng rng(2);
  for (const auto& p : model.params().items()) {
    Tensor t = p.tensor;
    for (auto& v : t.data()) v += static_cast<Real>(rng.uniform(-0.1, 0.1));
  }
  const auto dev = sample_pairs(81, 50, 5);
  save_checkpoint(dir / "m.ckpt", model, rc);
  const LoadedCheckpoint loaded = load_checkpoint(dir / "m.ckpt");
  CHECK(loaded.model->params().snapshot() == model.params().snapshot());
  CHECK(loaded.model->predict(dev) == model.predict(dev));
  CHECK(accuracy(loaded.model->predict(dev), dev) == accuracy(model.predict(dev), dev));
  // The stored config is the resolved one, so automatic sizes are explicit.
  RunConfig resolved = rc;
  resolved.model = model.config();
  CHECK(to_json(loaded.config) == to_json(resolved));

  const auto bytes = read_bytes(dir / "m.ckpt");
  SUBCASE("bad magic") {
    auto b = bytes;
    b[0] = 'X';
    write_bytes(dir / "bad.ckpt", b);
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), DataError);
  }
  SUBCASE("version mismatch") {
    auto b = bytes;
    b[8] = 2;
    write_bytes(dir / "bad.ckpt", b);
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "bad.ckpt"), doctest::Contains("version 2"), DataError);
  }
  SUBCASE("shape mismatch") {
    std::uint64_t json_len;
    std::memcpy(&json_len, bytes.data() + 16, 8);
    std::uint32_t name_len;
    const std::size_t first_param = 24 + json_len + 8;
    std::memcpy(&name_len, bytes.data() + first_param, 4);
    const std::size_t first_dim = first_param + 4 + name_len + 4;
    auto b = bytes;
    b[first_dim] = static_cast<char>(b[first_dim] + 1);
    write_bytes(dir / "bad.ckpt", b);
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "bad.ckpt"), doctest::Contains("shape"), DataError);
  }
  SUBCASE("truncated") {
    auto b = bytes;
    b.resize(b.size() - 3);
    write_bytes(dir / "bad.ckpt", b);
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), DataError);
  }
  fs::remove_all(dir);
}

TEST_CASE("gate traces") {
  PairModel model(small_model(EncoderKind::hybrid), 5);
  const std::vector<std::string> exprs{"( a ( and ( not b ) ) )", "c"};
  std::ostringstream a, b;
  trace_gates(model, exprs, a);
  trace_gates(model, exprs, b);
  CHECK(a.str() == b.str());
  std::istringstream in(a.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "expr,layer,step,token,chunk,f_master,i_master");
  std::map<std::tuple<int, int, int>, std::vector<double>> forget_rows;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    REQUIRE(f.size() == 7);
    const double fm = std::stod(f[5]), im = std::stod(f[6]);
    CHECK(fm >= 0);
    CHECK(fm <= 1);
    CHECK(im >= 0);
    CHECK(im <= 1);
    forget_rows[{std::stoi(f[0]), std::stoi(f[1]), std::stoi(f[2])}].push_back(fm);
    ++rows;
  }
  // Width 16 resolves to one neuron per level: 16 levels; 10 + 1 tokens.
  CHECK(rows == (10 + 1) * 16);
  for (const auto& [key, row] : forget_rows)
    for (std::size_t j = 1; j < row.size(); ++j) CHECK(row[j] >= row[j - 1] - 1e-12);

  PairModel san(small_model(EncoderKind::san), 5);
  std::ostringstream sink;
  CHECK_THROWS_AS(trace_gates(san, exprs, sink), ConfigError);
}

TEST_CASE("gradcheck matrix covers every kind and catches a flipped gradient") {
  const auto matrix = gradcheck_matrix();
  std::set<EncoderKind> kinds;
  for (const auto& c : matrix) kinds.insert(c.model.encoder.kind);
  CHECK(kinds.size() == 4);

  testing_hooks::set_gradient_fault("layer_norm");
  const auto results = run_gradcheck_matrix(1e-3, 42);
  testing_hooks::set_gradient_fault("");
  bool san_failed = false;
  for (const auto& r : results)
    if (r.config.model.encoder.kind == EncoderKind::san) san_failed = san_failed || !r.report.passed;
  CHECK(san_failed);
  const std::string report = format_gradcheck_report(results, 1e-3);
  CHECK(report.find("FAIL") != std::string::npos);
  CHECK(report.find("BAD") != std::string::npos);
}
