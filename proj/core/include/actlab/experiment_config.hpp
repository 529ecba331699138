#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "actlab/corpus.hpp"
#include "actlab/model.hpp"
#include "actlab/train.hpp"

namespace actlab {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SweepLists {
  std::vector<int> a;
  std::vector<int> t;
  std::vector<int> n{1};
  std::vector<double> f{1.0};
  std::vector<int> s;  // empty: s = a for every run
};

/// Everything a CLI command needs. Loaded from an INI-style file:
///
///   [model]      path, d, vocab, layers, heads, max_context, p_bits, split_layer
///   [train]      steps, batch, seq_len, lr, seed, corpus_seed, branching,
///                sharpness, heldout, eval_every
///   [sweep]      a, t, n, f, s (comma-separated lists), repetitions
///   [optimizer]  steps, lr
///   [run]        seed, threads, out, precision
///
/// Unknown sections or keys are errors.
struct ExperimentConfig {
  std::optional<std::filesystem::path> model_path;
  ModelConfig model;
  int split_layer = 0;
  CorpusSpec corpus;
  TrainOptions train;

  SweepLists sweep;
  int repetitions = 5;
  int steps = 300;
  double lr = 0.1;

  std::uint64_t seed = 0;
  int threads = 0;  // 0: hardware concurrency
  std::filesystem::path out_dir = "out";
  int precision = 32;

  /// Basic range checks shared by every command.
  void validate() const;
  /// Additionally requires non-empty a and t lists.
  void validate_for_sweep() const;

  /// Stable textual form of every setting (used for hashing and echoing).
  std::string canonical() const;
  std::string hash() const;
  int worker_count() const;
};

ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::filesystem::path& path);

/// "1,2,4" -> {1, 2, 4}; whitespace around items is ignored.
std::vector<int> parse_int_list(const std::string& text);
std::vector<double> parse_double_list(const std::string& text);

/// Default separations for the separation sweep: powers of two up to the limit.
std::vector<int> default_separation_list(int max_s);

}  // namespace actlab
