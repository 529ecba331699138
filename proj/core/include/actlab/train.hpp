#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "actlab/corpus.hpp"
#include "actlab/model.hpp"

namespace actlab {

struct TrainOptions {
  int steps = 2000;
  int batch = 4;
  int seq_len = 32;
  double lr = 3e-3;
  std::uint64_t seed = 0;
  int heldout_sequences = 32;
  int eval_every = 100;

  void validate(const ModelConfig& config) const;
};

struct TrainLogEntry {
  int step = 0;
  double train_loss = std::numeric_limits<double>::quiet_NaN();
  double heldout_loss = std::numeric_limits<double>::quiet_NaN();
};

template <typename T>
struct TrainResult {
  Weights<T> weights;
  std::vector<TrainLogEntry> log;
  double initial_heldout_loss = 0;
  double final_heldout_loss = 0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Held-out sequences drawn from the corpus with a stream independent of training.
std::vector<TokenSeq> heldout_set(const MarkovCorpus& corpus, int count, int length);

/// Mean next-token cross-entropy over every position of every sequence.
template <typename T>
double sequence_loss(const Weights<T>& weights, const std::vector<TokenSeq>& sequences);

/// Trains a decoder on corpus samples with Adam. Deterministic per seed; steps
/// = 0 returns the initialization. Throws TrainingDiverged on a non-finite loss.
template <typename T>
TrainResult<T> train(const ModelConfig& config, const CorpusSpec& corpus, const TrainOptions& options);

}  // namespace actlab
