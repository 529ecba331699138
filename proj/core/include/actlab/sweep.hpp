#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "actlab/attack.hpp"
#include "actlab/experiment_config.hpp"
#include "actlab/records.hpp"

namespace actlab {

struct SweepJob {
  AttackType type = AttackType::activation;
  AttackSpec spec;  // spec.seed is the derived run seed
  int repetition = 0;
};

struct SweepPlan {
  std::vector<SweepJob> jobs;
  std::vector<std::string> warnings;  // skipped combinations
};

/// hash(base seed, attack type, spec fields, repetition). The spec's own seed
/// is ignored, so extending a sweep never changes existing runs.
std::uint64_t run_seed(std::uint64_t base_seed, AttackType type, const AttackSpec& spec, int repetition);

/// Every (s, a, n, f, t, repetition) combination of the config. s = a when the
/// s list is empty. Combinations that do not fit the model context, have
/// a > s, or select no dimensions are skipped with a warning.
SweepPlan plan_activation_sweep(const ExperimentConfig& config, const ModelConfig& model);
/// Same for the token attack: n = 1, f = 1, no optimizer (steps = 0, lr = 0).
SweepPlan plan_token_sweep(const ExperimentConfig& config, const ModelConfig& model);

/// n random (context, target) pairs of lengths (s, t) drawn from the run seed.
std::vector<AttackPair> attack_pairs(const AttackSpec& spec, int vocab);

template <typename T>
RunRecord run_job(const Model<T>& model, const SweepJob& job);

struct SweepOptions {
  std::filesystem::path records_path;
  std::filesystem::path timings_path;  // empty: no sidecar
  int threads = 1;
  std::optional<std::size_t> max_new_runs;  // stop early (used to simulate interruption)
  std::function<void(const std::string&)> log;
};

struct SweepSummary {
  std::size_t planned = 0;
  std::size_t already_done = 0;
  std::size_t executed = 0;
  std::size_t dropped_lines = 0;
  bool complete = false;  // every planned job has a record; file rewritten in sorted order
};

/// Runs the jobs missing from records_path, appending one line per finished
/// run through a single writer. Once every job is present the file is
/// rewritten sorted, so the final bytes do not depend on scheduling.
template <typename T>
SweepSummary run_sweep(const Model<T>& model, const std::vector<SweepJob>& jobs, const SweepOptions& options);

}  // namespace actlab
