#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <sstream>

#include "actlab/experiment_config.hpp"
#include "actlab/random.hpp"
#include "actlab/records.hpp"
#include "actlab/report.hpp"
#include "actlab/sweep.hpp"
#include "actlab/weight_io.hpp"
#include "actlab/workflow.hpp"

namespace {

using namespace actlab;

struct CommonFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<int> precision;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool config_required) {
  auto* opt = cmd->add_option("--config", f.config, "Experiment config file (INI)");
  if (config_required) opt->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out, "Output directory (overrides [run] out)");
  cmd->add_option("--seed", f.seed, "Base seed (overrides [run] seed)");
  cmd->add_option("--threads", f.threads, "Worker threads (overrides [run] threads)")->check(CLI::PositiveNumber);
  cmd->add_option("--precision", f.precision, "Floating-point precision in bits")->check(CLI::IsMember({32, 64}));
}

ExperimentConfig resolve(const CommonFlags& f) {
  ExperimentConfig c = f.config.empty() ? ExperimentConfig{} : load_config(f.config);
  if (!f.out.empty()) c.out_dir = f.out;
  if (f.seed) c.seed = *f.seed;
  if (f.threads) c.threads = *f.threads;
  if (f.precision) c.precision = *f.precision;
  c.validate();
  return c;
}

void log_line(const std::string& msg) { std::cerr << "[actlab] " << msg << '\n'; }

template <typename T>
int sweep_with(const ExperimentConfig& c, const SweepPlan& plan, std::optional<std::size_t> max_runs) {
  for (const auto& w : plan.warnings) log_line("warning: " + w);
  Model<T> model(obtain_weights<T>(c, log_line), c.split_layer);
  SweepOptions opt;
  opt.records_path = c.out_dir / "records.jsonl";
  opt.timings_path = c.out_dir / "timings.jsonl";
  opt.threads = c.worker_count();
  opt.max_new_runs = max_runs;
  opt.log = log_line;
  const auto summary = run_sweep(model, plan.jobs, opt);
  std::cout << "planned " << summary.planned << ", already done " << summary.already_done << ", executed "
            << summary.executed << (summary.complete ? ", complete" : ", incomplete") << '\n';
  std::cout << "records: " << opt.records_path.string() << '\n';
  return summary.complete ? 0 : 3;
}

enum class SweepKind { activation, token, separation };

int run_sweep_command(const CommonFlags& flags, SweepKind kind, std::optional<std::size_t> max_runs) {
  ExperimentConfig c = resolve(flags);
  // The plan needs the real context length, which may come from a weight file.
  ModelConfig shape = c.model;
  if (c.model_path) shape = read_weight_header(*c.model_path).config;
  if (kind == SweepKind::separation && c.sweep.s.empty()) {
    if (c.sweep.t.empty()) throw ConfigError("sweep.t list is empty");
    const int longest_t = *std::max_element(c.sweep.t.begin(), c.sweep.t.end());
    c.sweep.s = default_separation_list(shape.max_context - longest_t);
    std::ostringstream os;
    for (std::size_t i = 0; i < c.sweep.s.size(); ++i) os << (i ? "," : "") << c.sweep.s[i];
    log_line("separation preset s = " + os.str());
  }
  const SweepPlan plan = kind == SweepKind::token ? plan_token_sweep(c, shape) : plan_activation_sweep(c, shape);
  return c.precision == 64 ? sweep_with<double>(c, plan, max_runs) : sweep_with<float>(c, plan, max_runs);
}

int run_train_command(const CommonFlags& flags) {
  const ExperimentConfig c = resolve(flags);
  if (c.precision == 64) {
    train_and_save<double>(c, c.out_dir, log_line);
  } else {
    train_and_save<float>(c, c.out_dir, log_line);
  }
  std::cout << "weights: " << (c.out_dir / "model.bin").string() << '\n'
            << "loss curve: " << (c.out_dir / "train_log.csv").string() << '\n';
  return 0;
}

struct FitFlags {
  std::string records;
  std::string arith;
  std::optional<double> d, p_bits, vocab, kappa;
  double kappa_stderr = 0;
};

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << SeedHasher(0).add(text).value();
  return os.str();
}

int run_fit_command(const CommonFlags& flags, const FitFlags& fit) {
  const ExperimentConfig c = resolve(flags);

  if (!fit.arith.empty() || fit.kappa) {
    std::vector<ResistanceRow> rows;
    if (!fit.arith.empty()) rows = read_resistance_rows(fit.arith);
    if (fit.kappa) {
      if (!fit.d || !fit.vocab) throw std::invalid_argument("--kappa needs --d and --vocab");
      rows.push_back({"cli", *fit.d, fit.p_bits.value_or(16.0), *fit.vocab, *fit.kappa, fit.kappa_stderr});
    }
    const std::string table = resistance_table_csv(rows);
    std::filesystem::create_directories(c.out_dir);
    write_file_atomic(c.out_dir / "resistance.csv", table);
    std::cout << table;
    return 0;
  }

  const std::filesystem::path records_path = fit.records.empty() ? c.out_dir / "records.jsonl" : std::filesystem::path(fit.records);
  if (!std::filesystem::exists(records_path)) throw std::runtime_error(records_path.string() + " does not exist");
  const auto file = read_records(records_path);
  if (file.dropped_lines) log_line("ignoring a truncated trailing line in " + records_path.string());

  std::optional<ModelConfig> model;
  if (c.model_path && std::filesystem::exists(*c.model_path)) {
    model = read_weight_header(*c.model_path).config;
  } else if (!flags.config.empty()) {
    model = c.model;
  }
  const auto report = build_report(file.records, model);
  const std::string hash = flags.config.empty() ? file_hash(records_path) : c.hash();
  write_report(report, c.out_dir, hash);
  for (const auto& n : report.notes) log_line("note: " + n);
  for (const auto& k : report.kappa) {
    std::cout << "kappa (s=" << (k.separation == kSeparationEqualsA ? std::string("a") : std::to_string(k.separation))
              << ") = " << format_double(k.fit.kappa) << " +- " << format_double(k.fit.kappa_stderr) << '\n';
  }
  if (report.token_kappa) {
    std::cout << "token kappa = " << format_double(report.token_kappa->inverse_variance_mean) << " (inverse-variance), "
              << format_double(report.token_kappa->variance_weighted_mean) << " (variance-weighted)\n";
  }
  std::cout << "report: " << (c.out_dir / "report.csv").string() << " (config " << hash << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Activation and token attack experiments on a small decoder"};
  app.require_subcommand(1);

  CommonFlags train_flags, sweep_flags, token_flags, sep_flags, fit_flags;
  std::optional<std::size_t> max_runs;

  auto* train = app.add_subcommand("train", "Train a model and write its weights and loss curve");
  add_common(train, train_flags, false);

  auto* sweep = app.add_subcommand("sweep", "Run the activation attack over the configured grid");
  add_common(sweep, sweep_flags, true);
  sweep->add_option("--max-runs", max_runs, "Stop after this many new runs (resume later)");

  auto* token = app.add_subcommand("token-sweep", "Run the greedy token-substitution attack over the grid");
  add_common(token, token_flags, true);
  token->add_option("--max-runs", max_runs, "Stop after this many new runs (resume later)");

  auto* sep = app.add_subcommand("separation-sweep", "Activation sweep over context lengths s (power-of-two preset)");
  add_common(sep, sep_flags, true);
  sep->add_option("--max-runs", max_runs, "Stop after this many new runs (resume later)");

  FitFlags fit;
  auto* fitc = app.add_subcommand("fit", "Aggregate records and fit t_max, kappa, chi and token kappa");
  add_common(fitc, fit_flags, false);
  fitc->add_option("--records", fit.records, "Record file (default <out>/records.jsonl)");
  fitc->add_option("--arith", fit.arith, "CSV of name,d,p_bits,vocab,kappa[,kappa_stderr]: print chi per row")
      ->check(CLI::ExistingFile);
  fitc->add_option("--d", fit.d, "Arithmetic mode: model width");
  fitc->add_option("--p-bits", fit.p_bits, "Arithmetic mode: bits per activation value (default 16)");
  fitc->add_option("--vocab", fit.vocab, "Arithmetic mode: vocabulary size");
  fitc->add_option("--kappa", fit.kappa, "Arithmetic mode: attack multiplier");
  fitc->add_option("--kappa-stderr", fit.kappa_stderr, "Arithmetic mode: its standard error");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return run_train_command(train_flags);
    if (*sweep) return run_sweep_command(sweep_flags, SweepKind::activation, max_runs);
    if (*token) return run_sweep_command(token_flags, SweepKind::token, max_runs);
    if (*sep) return run_sweep_command(sep_flags, SweepKind::separation, max_runs);
    if (*fitc) return run_fit_command(fit_flags, fit);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
