#include "actlab/corpus.hpp"

#include <cmath>
#include <stdexcept>

namespace actlab {

void CorpusSpec::validate() const {
  if (vocab < 2) throw std::invalid_argument("corpus: vocab must be at least 2");
  if (branching < 1 || branching > vocab) throw std::invalid_argument("corpus: branching must be in [1, vocab]");
  if (!(sharpness >= 0.0)) throw std::invalid_argument("corpus: sharpness must be non-negative");
}

MarkovCorpus::MarkovCorpus(const CorpusSpec& spec) : spec_(spec) {
  spec_.validate();
  const auto v = static_cast<std::size_t>(spec_.vocab);
  const auto k = static_cast<std::size_t>(spec_.branching);
  Rng rng(derive_seed(spec_.seed, "markov-chain"));
  successors_.reserve(v * k);
  for (std::size_t prev = 0; prev < v; ++prev) {
    for (auto s : sample_without_replacement(rng, v, k)) successors_.push_back(static_cast<int>(s));
  }
  cumulative_.resize(v * v * k);
  std::vector<double> w(k);
  for (std::size_t ctx = 0; ctx < v * v; ++ctx) {
    double total = 0;
    for (auto& x : w) {
      x = std::exp(spec_.sharpness * standard_normal(rng));
      total += x;
    }
    double acc = 0;
    for (std::size_t j = 0; j < k; ++j) {
      acc += w[j] / total;
      cumulative_[ctx * k + j] = acc;
    }
    cumulative_[ctx * k + k - 1] = 1.0;
  }
}

double MarkovCorpus::probability(int before_previous, int previous, int next) const {
  const auto v = static_cast<std::size_t>(spec_.vocab);
  const auto k = static_cast<std::size_t>(spec_.branching);
  const std::size_t ctx = static_cast<std::size_t>(before_previous) * v + static_cast<std::size_t>(previous);
  for (std::size_t j = 0; j < k; ++j) {
    if (successors_[static_cast<std::size_t>(previous) * k + j] == next) {
      return cumulative_[ctx * k + j] - (j ? cumulative_[ctx * k + j - 1] : 0.0);
    }
  }
  return 0.0;
}

double MarkovCorpus::mean_conditional_entropy() const {
  const auto v = static_cast<std::size_t>(spec_.vocab);
  const auto k = static_cast<std::size_t>(spec_.branching);
  double h = 0;
  for (std::size_t ctx = 0; ctx < v * v; ++ctx) {
    double prev = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const double p = cumulative_[ctx * k + j] - prev;
      prev = cumulative_[ctx * k + j];
      if (p > 0) h -= p * std::log(p);
    }
  }
  return h / static_cast<double>(v * v);
}

int MarkovCorpus::next_token(int before_previous, int previous, Rng& rng) const {
  const auto v = static_cast<std::size_t>(spec_.vocab);
  const auto k = static_cast<std::size_t>(spec_.branching);
  const std::size_t ctx = static_cast<std::size_t>(before_previous) * v + static_cast<std::size_t>(previous);
  const double u = uniform_unit(rng);
  std::size_t j = 0;
  while (j + 1 < k && u >= cumulative_[ctx * k + j]) ++j;
  return successors_[static_cast<std::size_t>(previous) * k + j];
}

TokenSeq MarkovCorpus::sample(std::size_t length, Rng& rng) const {
  TokenSeq seq;
  seq.reserve(length);
  for (std::size_t i = 0; i < length; ++i) {
    if (i < 2) {
      seq.push_back(static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(spec_.vocab))));
    } else {
      seq.push_back(next_token(seq[i - 2], seq[i - 1], rng));
    }
  }
  return seq;
}

}  // namespace actlab
