#include "actlab/success_grid.hpp"

#include <cmath>
#include <string>

namespace actlab {

void SuccessGrid::add(const GridKey& key, std::uint64_t seed, double success_fraction, bool full_success) {
  if (!(success_fraction >= 0 && success_fraction <= 1)) {
    throw std::invalid_argument("success_fraction outside [0, 1]");
  }
  if (full_success && success_fraction != 1.0) throw std::invalid_argument("full success with fraction below 1");
  auto [it, inserted] = cells_[key].try_emplace(seed, Run{success_fraction, full_success});
  if (!inserted) throw DuplicateRunError("duplicate run with seed " + std::to_string(seed));
}

void SuccessGrid::merge(const SuccessGrid& other) {
  for (const auto& [key, runs] : other.cells_) {
    auto found = cells_.find(key);
    if (found == cells_.end()) continue;
    for (const auto& [seed, run] : runs) {
      if (found->second.contains(seed)) throw DuplicateRunError("duplicate run with seed " + std::to_string(seed));
    }
  }
  for (const auto& [key, runs] : other.cells_) {
    auto& dst = cells_[key];
    dst.insert(runs.begin(), runs.end());
  }
}

std::size_t SuccessGrid::run_count() const {
  std::size_t n = 0;
  for (const auto& [key, runs] : cells_) n += runs.size();
  return n;
}

CellStats SuccessGrid::stats(const GridKey& key) const {
  auto it = cells_.find(key);
  if (it == cells_.end()) throw std::out_of_range("no such grid cell");
  const auto& runs = it->second;
  CellStats c;
  c.count = runs.size();
  double sum = 0, full = 0;
  for (const auto& [seed, run] : runs) {
    sum += run.success_fraction;
    full += run.full_success ? 1 : 0;
  }
  c.mean = sum / static_cast<double>(c.count);
  c.full_rate = full / static_cast<double>(c.count);
  if (c.count > 1) {
    double ss = 0;
    for (const auto& [seed, run] : runs) ss += (run.success_fraction - c.mean) * (run.success_fraction - c.mean);
    c.stddev = std::sqrt(ss / static_cast<double>(c.count - 1));
  }
  return c;
}

std::map<GridKey, CellStats> SuccessGrid::all_stats() const {
  std::map<GridKey, CellStats> out;
  for (const auto& [key, runs] : cells_) out.emplace(key, stats(key));
  return out;
}

}  // namespace actlab
