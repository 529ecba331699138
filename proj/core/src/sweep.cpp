#include "actlab/sweep.hpp"

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

namespace actlab {

std::uint64_t run_seed(std::uint64_t base_seed, AttackType type, const AttackSpec& spec, int repetition) {
  return SeedHasher(base_seed)
      .add(std::string_view(to_string(type)))
      .add(static_cast<std::uint64_t>(spec.a))
      .add(static_cast<std::uint64_t>(spec.s))
      .add(static_cast<std::uint64_t>(spec.t))
      .add(static_cast<std::uint64_t>(spec.n))
      .add(spec.f)
      .add(static_cast<std::uint64_t>(spec.steps))
      .add(spec.lr)
      .add(static_cast<std::uint64_t>(repetition))
      .value();
}

namespace {

std::string describe(const AttackSpec& s) {
  return "a=" + std::to_string(s.a) + " s=" + std::to_string(s.s) + " t=" + std::to_string(s.t) +
         " n=" + std::to_string(s.n) + " f=" + format_double(s.f);
}

// Returns an empty string when the combination is runnable.
std::string reject_reason(const AttackSpec& spec, const ModelConfig& model) {
  if (spec.a > spec.s) return "a exceeds s";
  if (spec.s + spec.t > model.max_context) {
    return "context overflow (s + t = " + std::to_string(spec.s + spec.t) + " > " +
           std::to_string(model.max_context) + ")";
  }
  if (std::lround(spec.f * model.d) < 1) return "f selects no dimensions";
  return "";
}

std::vector<int> separations(const ExperimentConfig& config, int a) {
  return config.sweep.s.empty() ? std::vector<int>{a} : config.sweep.s;
}

}  // namespace

SweepPlan plan_activation_sweep(const ExperimentConfig& config, const ModelConfig& model) {
  config.validate_for_sweep();
  SweepPlan plan;
  std::set<std::string> seen;
  for (int a : config.sweep.a) {
    for (int s : separations(config, a)) {
      for (int n : config.sweep.n) {
        for (double f : config.sweep.f) {
          for (int t : config.sweep.t) {
            AttackSpec spec{a, s, t, n, f, config.steps, config.lr, 0};
            const auto why = reject_reason(spec, model);
            if (!why.empty()) {
              const auto msg = "skipping " + describe(spec) + ": " + why;
              if (seen.insert(msg).second) plan.warnings.push_back(msg);
              continue;
            }
            for (int rep = 0; rep < config.repetitions; ++rep) {
              spec.seed = run_seed(config.seed, AttackType::activation, spec, rep);
              plan.jobs.push_back({AttackType::activation, spec, rep});
            }
          }
        }
      }
    }
  }
  return plan;
}

SweepPlan plan_token_sweep(const ExperimentConfig& config, const ModelConfig& model) {
  config.validate();
  if (config.sweep.a.empty()) throw ConfigError("sweep.a list is empty");
  if (config.sweep.t.empty()) throw ConfigError("sweep.t list is empty");
  SweepPlan plan;
  std::set<std::string> seen;
  for (int a : config.sweep.a) {
    for (int s : separations(config, a)) {
      for (int t : config.sweep.t) {
        AttackSpec spec{a, s, t, 1, 1.0, 0, 0.0, 0};
        auto why = reject_reason(spec, model);
        if (why.empty() && static_cast<std::size_t>(a) * model.vocab > kMaxTokenAttackPasses) {
          why = "a * V exceeds the enumeration guard";
        }
        if (!why.empty()) {
          const auto msg = "skipping token " + describe(spec) + ": " + why;
          if (seen.insert(msg).second) plan.warnings.push_back(msg);
          continue;
        }
        for (int rep = 0; rep < config.repetitions; ++rep) {
          spec.seed = run_seed(config.seed, AttackType::token, spec, rep);
          plan.jobs.push_back({AttackType::token, spec, rep});
        }
      }
    }
  }
  return plan;
}

std::vector<AttackPair> attack_pairs(const AttackSpec& spec, int vocab) {
  std::vector<AttackPair> pairs;
  pairs.reserve(static_cast<std::size_t>(spec.n));
  for (int k = 0; k < spec.n; ++k) {
    const auto idx = static_cast<std::uint64_t>(k);
    pairs.push_back({sample_random_tokens(vocab, static_cast<std::size_t>(spec.s), derive_seed(spec.seed, "context", idx)),
                     sample_random_tokens(vocab, static_cast<std::size_t>(spec.t), derive_seed(spec.seed, "target", idx))});
  }
  return pairs;
}

template <typename T>
RunRecord run_job(const Model<T>& model, const SweepJob& job) {
  RunRecord record;
  record.type = job.type;
  record.spec = job.spec;
  record.repetition = job.repetition;
  const auto pairs = attack_pairs(job.spec, model.config().vocab);
  if (job.type == AttackType::activation) {
    auto result = optimize_attack(model, std::span<const AttackPair>(pairs), job.spec);
    record.outcome = result.combined;
  } else {
    auto result = greedy_token_attack(model, pairs[0].context, pairs[0].target, job.spec.a);
    record.outcome = result.outcome;
    record.loss_trace = result.loss_trace;
  }
  return record;
}

template <typename T>
SweepSummary run_sweep(const Model<T>& model, const std::vector<SweepJob>& jobs, const SweepOptions& options) {
  auto log = [&](const std::string& msg) {
    if (options.log) options.log(msg);
  };
  if (options.records_path.has_parent_path()) std::filesystem::create_directories(options.records_path.parent_path());

  SweepSummary summary;
  summary.planned = jobs.size();

  auto existing = read_records(options.records_path);
  summary.dropped_lines = existing.dropped_lines;
  std::set<RunKey> done;
  std::vector<RunRecord> all = std::move(existing.records);
  for (const auto& r : all) {
    if (!done.insert(RunKey::of(r)).second) {
      throw RecordError("duplicate run in " + options.records_path.string() + " (seed " + std::to_string(r.spec.seed) + ")");
    }
  }
  if (summary.dropped_lines > 0) {
    log("dropping a truncated trailing record line");
    write_records_sorted(options.records_path, all);
  }

  std::vector<const SweepJob*> todo;
  for (const auto& job : jobs) {
    RunRecord probe;
    probe.type = job.type;
    probe.spec = job.spec;
    probe.repetition = job.repetition;
    if (done.count(RunKey::of(probe))) {
      ++summary.already_done;
    } else {
      todo.push_back(&job);
    }
  }
  std::size_t budget = todo.size();
  if (options.max_new_runs) budget = std::min(budget, *options.max_new_runs);

  std::ofstream records_out(options.records_path, std::ios::binary | std::ios::app);
  if (!records_out) throw std::runtime_error("cannot write " + options.records_path.string());
  std::ofstream timings_out;
  if (!options.timings_path.empty()) {
    timings_out.open(options.timings_path, std::ios::binary | std::ios::app);
    if (!timings_out) throw std::runtime_error("cannot write " + options.timings_path.string());
  }

  std::mutex sink;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= budget) return;
      {
        std::lock_guard lock(sink);
        if (failure) return;
      }
      try {
        const auto start = std::chrono::steady_clock::now();
        RunRecord record = run_job(model, *todo[i]);
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::lock_guard lock(sink);
        records_out << to_json_line(record) << '\n';
        records_out.flush();
        if (timings_out.is_open()) {
          nlohmann::json j{{"attack_type", to_string(record.type)},
                           {"seed", record.spec.seed},
                           {"rep", record.repetition},
                           {"seconds", seconds}};
          timings_out << j.dump() << '\n';
          timings_out.flush();
        }
        all.push_back(std::move(record));
        ++summary.executed;
      } catch (...) {
        std::lock_guard lock(sink);
        if (!failure) failure = std::current_exception();
      }
    }
  };

  const int threads = std::max(1, std::min<int>(options.threads, static_cast<int>(std::max<std::size_t>(budget, 1))));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < threads; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  records_out.close();
  if (failure) std::rethrow_exception(failure);

  summary.complete = summary.already_done + summary.executed == summary.planned;
  if (summary.complete) write_records_sorted(options.records_path, std::move(all));
  return summary;
}

template RunRecord run_job<float>(const Model<float>&, const SweepJob&);
template RunRecord run_job<double>(const Model<double>&, const SweepJob&);
template SweepSummary run_sweep<float>(const Model<float>&, const std::vector<SweepJob>&, const SweepOptions&);
template SweepSummary run_sweep<double>(const Model<double>&, const std::vector<SweepJob>&, const SweepOptions&);

}  // namespace actlab
