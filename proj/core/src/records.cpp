#include "actlab/records.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace actlab {

using nlohmann::json;

const char* to_string(AttackType type) { return type == AttackType::token ? "token" : "activation"; }

AttackType attack_type_from_string(const std::string& text) {
  if (text == "activation") return AttackType::activation;
  if (text == "token") return AttackType::token;
  throw RecordError("unknown attack_type '" + text + "'");
}

bool operator==(const RunRecord& x, const RunRecord& y) {
  return x.type == y.type && x.spec == y.spec && x.repetition == y.repetition &&
         x.outcome.per_token_correct == y.outcome.per_token_correct &&
         x.outcome.success_fraction == y.outcome.success_fraction &&
         x.outcome.full_success == y.outcome.full_success && x.outcome.final_loss == y.outcome.final_loss &&
         x.outcome.steps_used == y.outcome.steps_used && x.loss_trace == y.loss_trace && x.version == y.version;
}

RunKey RunKey::of(const RunRecord& r) {
  const auto& s = r.spec;
  return {r.type, s.s, s.a, s.n, s.f, s.t, s.steps, s.lr, r.repetition, s.seed};
}

std::string to_json_line(const RunRecord& r) {
  std::string correct;
  correct.reserve(r.outcome.per_token_correct.size());
  for (bool c : r.outcome.per_token_correct) correct.push_back(c ? '1' : '0');

  json j;
  j["attack_type"] = to_string(r.type);
  j["a"] = r.spec.a;
  j["s"] = r.spec.s;
  j["t"] = r.spec.t;
  j["n"] = r.spec.n;
  j["f"] = r.spec.f;
  j["steps"] = r.spec.steps;
  j["lr"] = r.spec.lr;
  j["seed"] = r.spec.seed;
  j["rep"] = r.repetition;
  j["per_token_correct"] = correct;
  j["success_fraction"] = r.outcome.success_fraction;
  j["full_success"] = r.outcome.full_success;
  // JSON has no non-finite numbers; an aborted run keeps a null loss.
  if (std::isfinite(r.outcome.final_loss)) {
    j["final_loss"] = r.outcome.final_loss;
  } else {
    j["final_loss"] = nullptr;
  }
  j["steps_used"] = r.outcome.steps_used;
  if (r.type == AttackType::token) j["loss_trace"] = r.loss_trace;
  j["version"] = r.version;
  return j.dump();
}

RunRecord record_from_json_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw RecordError(std::string("malformed record: ") + e.what());
  }
  try {
    RunRecord r;
    r.type = attack_type_from_string(j.at("attack_type").get<std::string>());
    r.spec.a = j.at("a").get<int>();
    r.spec.s = j.at("s").get<int>();
    r.spec.t = j.at("t").get<int>();
    r.spec.n = j.at("n").get<int>();
    r.spec.f = j.at("f").get<double>();
    r.spec.steps = j.at("steps").get<int>();
    r.spec.lr = j.at("lr").get<double>();
    r.spec.seed = j.at("seed").get<std::uint64_t>();
    r.repetition = j.at("rep").get<int>();
    const auto correct = j.at("per_token_correct").get<std::string>();
    r.outcome.per_token_correct.reserve(correct.size());
    for (char c : correct) {
      if (c != '0' && c != '1') throw RecordError("per_token_correct must contain only 0 and 1");
      r.outcome.per_token_correct.push_back(c == '1');
    }
    r.outcome.success_fraction = j.at("success_fraction").get<double>();
    r.outcome.full_success = j.at("full_success").get<bool>();
    const auto& loss = j.at("final_loss");
    r.outcome.final_loss = loss.is_null() ? std::nan("") : loss.get<double>();
    r.outcome.steps_used = j.at("steps_used").get<int>();
    if (j.contains("loss_trace")) r.loss_trace = j.at("loss_trace").get<std::vector<double>>();
    r.version = j.at("version").get<std::string>();
    if (r.outcome.per_token_correct.size() != static_cast<std::size_t>(r.spec.t) * r.spec.n) {
      throw RecordError("per_token_correct length differs from t * n");
    }
    return r;
  } catch (const json::exception& e) {
    throw RecordError(std::string("malformed record: ") + e.what());
  }
}

RecordFile read_records(const std::filesystem::path& path) {
  RecordFile out;
  std::ifstream in(path, std::ios::binary);
  if (!in) return out;
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      out.records.push_back(record_from_json_line(lines[i]));
    } catch (const RecordError&) {
      if (i + 1 != lines.size()) throw;
      ++out.dropped_lines;
    }
  }
  return out;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << contents;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_records_sorted(const std::filesystem::path& path, std::vector<RunRecord> records) {
  std::sort(records.begin(), records.end(),
            [](const RunRecord& x, const RunRecord& y) { return RunKey::of(x) < RunKey::of(y); });
  std::string text;
  for (const auto& r : records) {
    text += to_json_line(r);
    text += '\n';
  }
  write_file_atomic(path, text);
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

}  // namespace actlab
