#include "actlab/experiment_config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "actlab/random.hpp"

namespace actlab {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& raw, const std::string& where) {
  const std::string text = trim(raw);
  T value{};
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || text.empty()) {
    throw ConfigError("cannot parse '" + text + "' for " + where);
  }
  return value;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const std::string& where) {
  std::vector<T> out;
  if (trim(text).empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(item, where));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t i = 0; i < values.size(); ++i) os << (i ? "," : "") << values[i];
  return os.str();
}

}  // namespace

std::vector<int> parse_int_list(const std::string& text) { return parse_list<int>(text, "integer list"); }
std::vector<double> parse_double_list(const std::string& text) { return parse_list<double>(text, "number list"); }

std::vector<int> default_separation_list(int max_s) {
  std::vector<int> out;
  for (int s = 1; s <= max_s; s *= 2) out.push_back(s);
  return out;
}

namespace {

// ini_parser only knows whole-line comments; drop "; ..." or "# ..." that
// follows whitespace so values can carry a trailing remark.
std::string strip_inline_comments(std::istream& in) {
  std::string out, line;
  while (std::getline(in, line)) {
    for (std::size_t i = 1; i < line.size(); ++i) {
      if ((line[i] == ';' || line[i] == '#') && std::isspace(static_cast<unsigned char>(line[i - 1]))) {
        line.erase(i);
        break;
      }
    }
    out += line;
    out += '\n';
  }
  return out;
}

}  // namespace

ExperimentConfig parse_config(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream cleaned(strip_inline_comments(in));
    pt::read_ini(cleaned, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }

  ExperimentConfig c;
  using Setter = std::function<void(const std::string&)>;
  auto integer = [](int& dst, std::string key) {
    return Setter([&dst, key](const std::string& v) { dst = parse_number<int>(v, key); });
  };
  auto real = [](double& dst, std::string key) {
    return Setter([&dst, key](const std::string& v) { dst = parse_number<double>(v, key); });
  };
  auto u64 = [](std::uint64_t& dst, std::string key) {
    return Setter([&dst, key](const std::string& v) { dst = parse_number<std::uint64_t>(v, key); });
  };

  const std::map<std::string, std::map<std::string, Setter>> schema = {
      {"model",
       {{"path", [&](const std::string& v) { c.model_path = std::filesystem::path(trim(v)); }},
        {"d", integer(c.model.d, "model.d")},
        {"vocab", integer(c.model.vocab, "model.vocab")},
        {"layers", integer(c.model.n_layers, "model.layers")},
        {"heads", integer(c.model.n_heads, "model.heads")},
        {"max_context", integer(c.model.max_context, "model.max_context")},
        {"p_bits", integer(c.model.p_bits, "model.p_bits")},
        {"split_layer", integer(c.split_layer, "model.split_layer")}}},
      {"train",
       {{"steps", integer(c.train.steps, "train.steps")},
        {"batch", integer(c.train.batch, "train.batch")},
        {"seq_len", integer(c.train.seq_len, "train.seq_len")},
        {"lr", real(c.train.lr, "train.lr")},
        {"seed", u64(c.train.seed, "train.seed")},
        {"corpus_seed", u64(c.corpus.seed, "train.corpus_seed")},
        {"branching", integer(c.corpus.branching, "train.branching")},
        {"sharpness", real(c.corpus.sharpness, "train.sharpness")},
        {"heldout", integer(c.train.heldout_sequences, "train.heldout")},
        {"eval_every", integer(c.train.eval_every, "train.eval_every")}}},
      {"sweep",
       {{"a", [&](const std::string& v) { c.sweep.a = parse_int_list(v); }},
        {"t", [&](const std::string& v) { c.sweep.t = parse_int_list(v); }},
        {"n", [&](const std::string& v) { c.sweep.n = parse_int_list(v); }},
        {"f", [&](const std::string& v) { c.sweep.f = parse_double_list(v); }},
        {"s", [&](const std::string& v) { c.sweep.s = parse_int_list(v); }},
        {"repetitions", integer(c.repetitions, "sweep.repetitions")}}},
      {"optimizer", {{"steps", integer(c.steps, "optimizer.steps")}, {"lr", real(c.lr, "optimizer.lr")}}},
      {"run",
       {{"seed", u64(c.seed, "run.seed")},
        {"threads", integer(c.threads, "run.threads")},
        {"out", [&](const std::string& v) { c.out_dir = std::filesystem::path(trim(v)); }},
        {"precision", integer(c.precision, "run.precision")}}},
  };

  for (const auto& [section, body] : tree) {
    if (!body.data().empty() && body.empty()) {
      throw ConfigError("key '" + section + "' outside of a section");
    }
    auto sec = schema.find(section);
    if (sec == schema.end()) throw ConfigError("unknown config section [" + section + "]");
    for (const auto& [key, value] : body) {
      auto setter = sec->second.find(key);
      if (setter == sec->second.end()) throw ConfigError("unknown config key '" + key + "' in [" + section + "]");
      setter->second(value.data());
    }
  }
  c.corpus.vocab = c.model.vocab;
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  ExperimentConfig c = parse_config(in);
  // Relative paths inside the file are relative to the file itself.
  const auto base = path.parent_path();
  if (c.model_path && c.model_path->is_relative()) c.model_path = base / *c.model_path;
  return c;
}

void ExperimentConfig::validate() const {
  try {
    model.validate();
    corpus.validate();
    train.validate(model);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (corpus.vocab != model.vocab) throw ConfigError("corpus vocab differs from model vocab");
  if (split_layer < 0 || split_layer > model.n_layers) throw ConfigError("model.split_layer outside [0, layers]");
  if (repetitions < 1) throw ConfigError("sweep.repetitions must be positive");
  if (steps < 0) throw ConfigError("optimizer.steps must be non-negative");
  if (!(lr > 0)) throw ConfigError("optimizer.lr must be positive");
  if (threads < 0) throw ConfigError("run.threads must be non-negative");
  if (precision != 32 && precision != 64) throw ConfigError("run.precision must be 32 or 64");
  for (int v : sweep.a) if (v < 1) throw ConfigError("sweep.a values must be >= 1");
  for (int v : sweep.t) if (v < 1) throw ConfigError("sweep.t values must be >= 1");
  for (int v : sweep.n) if (v < 1) throw ConfigError("sweep.n values must be >= 1");
  for (double v : sweep.f) if (!(v > 0 && v <= 1)) throw ConfigError("sweep.f values must be in (0, 1]");
  for (int v : sweep.s) if (v < 1) throw ConfigError("sweep.s values must be >= 1");
}

void ExperimentConfig::validate_for_sweep() const {
  validate();
  if (sweep.a.empty()) throw ConfigError("sweep.a list is empty");
  if (sweep.t.empty()) throw ConfigError("sweep.t list is empty");
  if (sweep.n.empty()) throw ConfigError("sweep.n list is empty");
  if (sweep.f.empty()) throw ConfigError("sweep.f list is empty");
}

std::string ExperimentConfig::canonical() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "model.path=" << (model_path ? model_path->string() : "") << '\n'
     << "model.d=" << model.d << '\n'
     << "model.vocab=" << model.vocab << '\n'
     << "model.layers=" << model.n_layers << '\n'
     << "model.heads=" << model.n_heads << '\n'
     << "model.max_context=" << model.max_context << '\n'
     << "model.p_bits=" << model.p_bits << '\n'
     << "model.split_layer=" << split_layer << '\n'
     << "train.steps=" << train.steps << '\n'
     << "train.batch=" << train.batch << '\n'
     << "train.seq_len=" << train.seq_len << '\n'
     << "train.lr=" << train.lr << '\n'
     << "train.seed=" << train.seed << '\n'
     << "train.corpus_seed=" << corpus.seed << '\n'
     << "train.branching=" << corpus.branching << '\n'
     << "train.sharpness=" << corpus.sharpness << '\n'
     << "train.heldout=" << train.heldout_sequences << '\n'
     << "train.eval_every=" << train.eval_every << '\n'
     << "sweep.a=" << join(sweep.a) << '\n'
     << "sweep.t=" << join(sweep.t) << '\n'
     << "sweep.n=" << join(sweep.n) << '\n'
     << "sweep.f=" << join(sweep.f) << '\n'
     << "sweep.s=" << join(sweep.s) << '\n'
     << "sweep.repetitions=" << repetitions << '\n'
     << "optimizer.steps=" << steps << '\n'
     << "optimizer.lr=" << lr << '\n'
     << "run.seed=" << seed << '\n'
     << "run.precision=" << precision << '\n';
  return os.str();
}

std::string ExperimentConfig::hash() const {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << SeedHasher(0).add(canonical()).value();
  return os.str();
}

int ExperimentConfig::worker_count() const {
  if (threads > 0) return threads;
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace actlab
