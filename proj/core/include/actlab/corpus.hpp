#pragma once

#include <cstdint>
#include <vector>

#include "actlab/model.hpp"
#include "actlab/random.hpp"

namespace actlab {

/// Order-2 Markov chain over the vocabulary.
///
/// Each previous token owns a fixed set of `branching` successors; the
/// token before it reweights that set, so both positions carry information.
struct CorpusSpec {
  int vocab = 64;
  std::uint64_t seed = 1;
  int branching = 8;
  double sharpness = 2.0;

  void validate() const;
};

class MarkovCorpus {
 public:
  explicit MarkovCorpus(const CorpusSpec& spec);

  const CorpusSpec& spec() const { return spec_; }
  TokenSeq sample(std::size_t length, Rng& rng) const;
  double probability(int before_previous, int previous, int next) const;
  /// Mean conditional entropy in nats over uniformly weighted contexts.
  double mean_conditional_entropy() const;

 private:
  int next_token(int before_previous, int previous, Rng& rng) const;

  CorpusSpec spec_;
  std::vector<int> successors_;      // vocab x branching
  std::vector<double> cumulative_;   // vocab x vocab x branching
};

}  // namespace actlab
