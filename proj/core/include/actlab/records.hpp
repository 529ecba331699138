#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "actlab/attack.hpp"

namespace actlab {

inline constexpr const char* kRecordVersion = "actlab-record-1";

enum class AttackType { activation, token };

const char* to_string(AttackType type);
AttackType attack_type_from_string(const std::string& text);

class RecordError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One attack run as stored in records.jsonl (one JSON object per line).
/// `spec.seed` is the run seed from which pairs and mask were drawn.
struct RunRecord {
  AttackType type = AttackType::activation;
  AttackSpec spec;
  int repetition = 0;
  AttackOutcome outcome;
  std::vector<double> loss_trace;  // token attacks only
  std::string version = kRecordVersion;

  friend bool operator==(const RunRecord& x, const RunRecord& y);
};

/// Identity of a run for resuming: same key means the same work.
struct RunKey {
  AttackType type;
  int s, a, n;
  double f;
  int t, steps;
  double lr;
  int repetition;
  std::uint64_t seed;

  static RunKey of(const RunRecord& r);
  auto operator<=>(const RunKey&) const = default;
};

std::string to_json_line(const RunRecord& record);
/// Throws RecordError on malformed input.
RunRecord record_from_json_line(const std::string& line);

struct RecordFile {
  std::vector<RunRecord> records;
  std::size_t dropped_lines = 0;  // unparsable trailing line from an interrupted write
};

/// Reads records.jsonl. A malformed final line is dropped (and counted); a
/// malformed line elsewhere throws RecordError. A missing file is empty.
RecordFile read_records(const std::filesystem::path& path);

/// Sorts by RunKey and writes atomically (temporary file + rename).
void write_records_sorted(const std::filesystem::path& path, std::vector<RunRecord> records);

/// Writes text to path via a temporary file in the same directory.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

/// Shortest decimal text that round-trips the double.
std::string format_double(double v);

}  // namespace actlab
