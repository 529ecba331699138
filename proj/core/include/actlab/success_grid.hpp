#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <vector>

#include "actlab/attack.hpp"

namespace actlab {

struct GridKey {
  int a = 1;
  int t = 1;
  int n = 1;
  double f = 1.0;
  int s = 1;

  static GridKey of(const AttackSpec& spec) { return {spec.a, spec.t, spec.n, spec.f, spec.s}; }
  auto operator<=>(const GridKey&) const = default;
};

struct CellStats {
  std::size_t count = 0;
  double mean = 0;       // mean success_fraction
  double stddev = 0;     // sample standard deviation (0 for a single run)
  double full_rate = 0;  // fraction of runs with full success

  friend bool operator==(const CellStats&, const CellStats&) = default;
};

class DuplicateRunError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Success statistics per (a, t, n, f, s). Runs are kept per cell ordered by
/// seed and statistics are computed in that order, so adding and merging are
/// exactly order-independent.
class SuccessGrid {
 public:
  void add(const GridKey& key, std::uint64_t seed, double success_fraction, bool full_success);
  void add(const AttackSpec& spec, const AttackOutcome& outcome) {
    add(GridKey::of(spec), spec.seed, outcome.success_fraction, outcome.full_success);
  }
  /// Throws DuplicateRunError if any (key, seed) is present in both grids.
  void merge(const SuccessGrid& other);

  std::size_t cell_count() const { return cells_.size(); }
  std::size_t run_count() const;
  CellStats stats(const GridKey& key) const;
  std::map<GridKey, CellStats> all_stats() const;

  friend bool operator==(const SuccessGrid&, const SuccessGrid&) = default;

 private:
  struct Run {
    double success_fraction;
    bool full_success;
    friend bool operator==(const Run&, const Run&) = default;
  };
  std::map<GridKey, std::map<std::uint64_t, Run>> cells_;
};

}  // namespace actlab
