#include "hybrid/dataset.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "hybrid/common.hpp"
#include "json.hpp"

namespace hybrid::logic {

namespace {

std::size_t split_size(std::size_t n, double fraction) {
  return static_cast<std::size_t>(std::floor(double(n) * fraction + 1e-9));
}

std::vector<LabeledPair> generate_bin(const Rng& root, int k, std::size_t count, std::size_t attempts_per_pair) {
  Rng rng = root.substream("bin", static_cast<std::uint64_t>(k));
  std::vector<LabeledPair> pairs;
  pairs.reserve(count);
  std::unordered_set<std::string> seen;
  const std::size_t max_attempts = count * attempts_per_pair;
  std::size_t attempts = 0;
  while (pairs.size() < count) {
    if (attempts++ >= max_attempts) {
      throw DataError("bin " + std::to_string(k) + " exhausted: " + std::to_string(pairs.size()) + " unique pairs of " +
                      std::to_string(count) + " after " + std::to_string(max_attempts) + " attempts");
    }
    const bool long_premise = rng.below(2) == 0;
    const int other = static_cast<int>(rng.below(static_cast<std::uint64_t>(k) + 1));
    Expr full = sample_expression(rng, k);
    Expr partner = sample_expression(rng, other);
    Expr premise = long_premise ? full : partner;
    Expr hypothesis = long_premise ? partner : full;
    if (!seen.insert(serialize(premise) + '\t' + serialize(hypothesis)).second) continue;
    pairs.push_back(make_pair(std::move(premise), std::move(hypothesis)));
  }
  return pairs;
}

nlohmann::ordered_json histogram_json(std::span<const LabeledPair> pairs) {
  const LabelHistogram h = label_histogram(pairs);
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (int i = 0; i < kRelationCount; ++i) j[relation_token(static_cast<Relation>(i))] = h[i];
  return j;
}

}  // namespace

LabeledPair make_pair(Expr premise, Expr hypothesis) {
  const Relation label = relate(premise, hypothesis);
  const int ops = std::max(operator_count(premise), operator_count(hypothesis));
  return {std::move(premise), std::move(hypothesis), label, ops};
}

BinSpec BinSpec::uniform(std::size_t per_bin) {
  BinSpec b;
  for (int k = 1; k <= kMaxOperators; ++k) b.counts[k] = per_bin;
  return b;
}

BinSpec BinSpec::parse(const std::string& text) {
  if (text == "default") return uniform(kDefaultPerBin);
  BinSpec b;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto colon = item.find(':');
    std::size_t used_bin = 0, used_count = 0;
    int bin = 0;
    long long count = 0;
    try {
      if (colon == std::string::npos) throw std::invalid_argument("missing ':'");
      bin = std::stoi(item.substr(0, colon), &used_bin);
      count = std::stoll(item.substr(colon + 1), &used_count);
    } catch (const std::exception&) {
      throw ConfigError("bad bin entry '" + item + "' (expected bin:count, e.g. 1:100)");
    }
    if (used_bin != colon || used_count != item.size() - colon - 1) {
      throw ConfigError("bad bin entry '" + item + "' (expected bin:count, e.g. 1:100)");
    }
    if (bin < 1 || bin > kMaxOperators) throw ConfigError("bin " + std::to_string(bin) + " outside 1..12");
    if (count <= 0) throw ConfigError("bin " + std::to_string(bin) + " needs a positive count");
    b.counts[bin] = static_cast<std::size_t>(count);
  }
  if (b.total() == 0) throw ConfigError("bin spec '" + text + "' requests no examples");
  return b;
}

std::size_t BinSpec::total() const {
  std::size_t t = 0;
  for (std::size_t c : counts) t += c;
  return t;
}

std::string BinSpec::to_string() const {
  std::string out;
  for (int k = 1; k <= kMaxOperators; ++k) {
    if (counts[k] == 0) continue;
    if (!out.empty()) out += ',';
    out += std::to_string(k) + ':' + std::to_string(counts[k]);
  }
  return out;
}

Dataset generate_dataset(std::uint64_t seed, const BinSpec& bins, const GenerationOptions& options) {
  if (bins.total() == 0) throw ConfigError("dataset needs at least one example");
  if (options.train_fraction < 0 || options.dev_fraction < 0 || options.train_fraction + options.dev_fraction > 1) {
    throw ConfigError("split fractions must be non-negative and sum to at most 1");
  }
  const Rng root(seed);
  std::vector<std::vector<LabeledPair>> per_bin(kMaxOperators + 1);
  std::string failure;
#pragma omp parallel for schedule(dynamic)
  for (int k = 1; k <= kMaxOperators; ++k) {
    if (bins.counts[k] == 0) continue;
    try {
      per_bin[k] = generate_bin(root, k, bins.counts[k], options.attempts_per_pair);
    } catch (const DataError& e) {
#pragma omp critical
      if (failure.empty()) failure = e.what();
    }
  }
  if (!failure.empty()) throw DataError(failure);

  Dataset data;
  for (int k = 1; k <= kMaxOperators; ++k) {
    const auto& pairs = per_bin[k];
    const std::size_t n_train = split_size(pairs.size(), options.train_fraction);
    const std::size_t n_dev = split_size(pairs.size(), options.dev_fraction);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      auto& dest = i < n_train ? data.train : (i < n_train + n_dev ? data.dev : data.test);
      dest.push_back(pairs[i]);
    }
  }
  return data;
}

LabelHistogram label_histogram(std::span<const LabeledPair> pairs) {
  LabelHistogram h{};
  for (const auto& p : pairs) ++h[static_cast<int>(p.label)];
  return h;
}

std::string format_example(const LabeledPair& pair) {
  return std::string(relation_token(pair.label)) + '\t' + serialize(pair.premise) + '\t' + serialize(pair.hypothesis);
}

LabeledPair parse_example(std::string_view line) {
  const auto t1 = line.find('\t');
  const auto t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
  if (t2 == std::string_view::npos || line.find('\t', t2 + 1) != std::string_view::npos) {
    throw DataError("expected three tab-separated fields: label, premise, hypothesis");
  }
  const Relation label = relation_from_string(line.substr(0, t1));
  auto parse_side = [&](std::size_t begin, std::size_t end, const char* side) {
    try {
      return parse_expression(line.substr(begin, end - begin));
    } catch (const ParseError& e) {
      throw ParseError(std::string(side) + ": " + e.what(), begin + e.offset());
    }
  };
  LabeledPair pair = make_pair(parse_side(t1 + 1, t2, "premise"), parse_side(t2 + 1, line.size(), "hypothesis"));
  pair.label = label;
  return pair;
}

std::vector<LabeledPair> read_examples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<LabeledPair> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    try {
      out.push_back(parse_example(line));
    } catch (const Error& e) {
      throw DataError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

void write_examples(const std::filesystem::path& path, std::span<const LabeledPair> pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& p : pairs) out << format_example(p) << '\n';
  if (!out) throw DataError("write failed for " + path.string());
}

std::string metadata_json(const Dataset& data, std::uint64_t seed, const BinSpec& bins) {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["sampler"] = "uniform operator choice, uniform budget split; one side has exactly k operators, "
                 "the other a uniform count in [0, k]; pairs unique";
  nlohmann::ordered_json requested = nlohmann::ordered_json::object();
  for (int k = 1; k <= kMaxOperators; ++k) {
    if (bins.counts[k] > 0) requested[std::to_string(k)] = bins.counts[k];
  }
  j["bins"] = requested;
  j["splits"] = {{"train", data.train.size()}, {"dev", data.dev.size()}, {"test", data.test.size()}};
  std::vector<LabeledPair> all;
  for (const auto* split : {&data.train, &data.dev, &data.test}) all.insert(all.end(), split->begin(), split->end());
  j["label_histogram"] = {{"all", histogram_json(all)},
                          {"train", histogram_json(data.train)},
                          {"dev", histogram_json(data.dev)},
                          {"test", histogram_json(data.test)}};
  nlohmann::ordered_json by_bin = nlohmann::ordered_json::object();
  for (int k = 1; k <= kMaxOperators; ++k) {
    std::vector<LabeledPair> bin;
    for (const auto& p : all)
      if (p.op_count == k) bin.push_back(p);
    if (!bin.empty()) by_bin[std::to_string(k)] = histogram_json(bin);
  }
  j["bin_label_histogram"] = by_bin;
  return j.dump(2) + "\n";
}

void write_dataset(const std::filesystem::path& dir, const Dataset& data, std::uint64_t seed, const BinSpec& bins) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  write_examples(dir / "train.tsv", data.train);
  write_examples(dir / "dev.tsv", data.dev);
  write_examples(dir / "test.tsv", data.test);
  std::ofstream meta(dir / "metadata.json", std::ios::binary);
  if (!meta) throw DataError("cannot write " + (dir / "metadata.json").string());
  meta << metadata_json(data, seed, bins);
}

}  // namespace hybrid::logic
