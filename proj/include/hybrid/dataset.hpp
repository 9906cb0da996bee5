#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hybrid/logic.hpp"

namespace hybrid::logic {

struct LabeledPair {
  Expr premise;
  Expr hypothesis;
  Relation label;
  int op_count;  // max over the two sides
};

LabeledPair make_pair(Expr premise, Expr hypothesis);

/// Requested examples per operator-count bin 1..12 (index 0 unused).
struct BinSpec {
  std::array<std::size_t, kMaxOperators + 1> counts{};

  static BinSpec uniform(std::size_t per_bin);
  /// "default" or a list such as "1:100,2:50".
  static BinSpec parse(const std::string& text);
  std::size_t total() const;
  std::string to_string() const;
};

inline constexpr std::size_t kDefaultPerBin = 6250;

struct GenerationOptions {
  double train_fraction = 0.8;
  double dev_fraction = 0.1;
  /// Sampling attempts allowed per requested pair before a bin is declared
  /// exhausted.
  std::size_t attempts_per_pair = 200;
};

struct Dataset {
  std::vector<LabeledPair> train;
  std::vector<LabeledPair> dev;
  std::vector<LabeledPair> test;
};

/// Unique pairs per bin; one side has exactly k operators, the other a
/// uniform count in [0, k]. Each bin is split by the configured fractions.
Dataset generate_dataset(std::uint64_t seed, const BinSpec& bins, const GenerationOptions& options = {});

using LabelHistogram = std::array<std::size_t, kRelationCount>;
LabelHistogram label_histogram(std::span<const LabeledPair> pairs);

/// label<TAB>premise<TAB>hypothesis
std::string format_example(const LabeledPair& pair);
LabeledPair parse_example(std::string_view line);

/// Errors name the path and 1-based line number.
std::vector<LabeledPair> read_examples(const std::filesystem::path& path);
void write_examples(const std::filesystem::path& path, std::span<const LabeledPair> pairs);

/// Sidecar description: seed, requested bins, split sizes, label histograms.
std::string metadata_json(const Dataset& data, std::uint64_t seed, const BinSpec& bins);

/// Writes train.tsv, dev.tsv, test.tsv and metadata.json into `dir`.
void write_dataset(const std::filesystem::path& dir, const Dataset& data, std::uint64_t seed, const BinSpec& bins);

}  // namespace hybrid::logic
