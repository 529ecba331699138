#include "actlab/train.hpp"

#include <cmath>
#include <string>

#include "actlab/adam.hpp"

namespace actlab {

void TrainOptions::validate(const ModelConfig& config) const {
  if (steps < 0) throw std::invalid_argument("train: steps must be non-negative");
  if (batch < 1) throw std::invalid_argument("train: batch must be positive");
  if (seq_len < 2 || seq_len > config.max_context) {
    throw std::invalid_argument("train: seq_len must be in [2, max_context]");
  }
  if (!(lr > 0)) throw std::invalid_argument("train: lr must be positive");
  if (heldout_sequences < 1) throw std::invalid_argument("train: heldout_sequences must be positive");
  if (eval_every < 1) throw std::invalid_argument("train: eval_every must be positive");
}

std::vector<TokenSeq> heldout_set(const MarkovCorpus& corpus, int count, int length) {
  Rng rng(derive_seed(corpus.spec().seed, "heldout"));
  std::vector<TokenSeq> out;
  for (int i = 0; i < count; ++i) out.push_back(corpus.sample(static_cast<std::size_t>(length), rng));
  return out;
}

namespace {

template <typename T>
Var sequence_graph_loss(Graph<T>& g, const BoundWeights& w, const TokenSeq& seq) {
  std::span<const int> all(seq);
  Var logits = forward_after(g, w, embed(g, w, all.first(seq.size() - 1)));
  return g.cross_entropy(logits, all.subspan(1));
}

}  // namespace

template <typename T>
double sequence_loss(const Weights<T>& weights, const std::vector<TokenSeq>& sequences) {
  double total = 0;
  std::size_t count = 0;
  for (const auto& seq : sequences) {
    if (seq.size() < 2) continue;
    Graph<T> g;
    const auto w = bind_constant(g, weights);
    const double loss = static_cast<double>(g.value(sequence_graph_loss(g, w, seq))[0]);
    total += loss * static_cast<double>(seq.size() - 1);
    count += seq.size() - 1;
  }
  if (count == 0) throw std::invalid_argument("sequence_loss: no scored positions");
  return total / static_cast<double>(count);
}

template <typename T>
TrainResult<T> train(const ModelConfig& config, const CorpusSpec& corpus_spec, const TrainOptions& options) {
  config.validate();
  options.validate(config);
  if (corpus_spec.vocab != config.vocab) throw std::invalid_argument("train: corpus and model vocab differ");
  const MarkovCorpus corpus(corpus_spec);
  const auto heldout = heldout_set(corpus, options.heldout_sequences, options.seq_len + 1);

  TrainResult<T> result{Weights<T>::initialize(config, derive_seed(options.seed, "init")), {}, 0, 0};
  Weights<T>& weights = result.weights;
  result.initial_heldout_loss = sequence_loss(weights, heldout);
  result.final_heldout_loss = result.initial_heldout_loss;
  result.log.push_back({0, std::numeric_limits<double>::quiet_NaN(), result.initial_heldout_loss});
  if (options.steps == 0) return result;

  std::vector<Tensor<T>*> params;
  weights.for_each_parameter([&](Tensor<T>& t) { params.push_back(&t); });
  Adam<T> adam({.lr = options.lr}, params);
  const T inv_batch = T(1) / static_cast<T>(options.batch);

  for (int step = 1; step <= options.steps; ++step) {
    adam.zero_grad();
    Rng rng(derive_seed(options.seed, "batch", static_cast<std::uint64_t>(step)));
    double batch_loss = 0;
    for (int b = 0; b < options.batch; ++b) {
      const TokenSeq seq = corpus.sample(static_cast<std::size_t>(options.seq_len) + 1, rng);
      Graph<T> g;
      const auto w = bind_trainable(g, weights);
      Var loss;
      try {
        loss = sequence_graph_loss(g, w, seq);
      } catch (const NonFiniteError& e) {
        throw TrainingDiverged("training diverged at step " + std::to_string(step) + ": " + e.what());
      }
      batch_loss += static_cast<double>(g.value(loss)[0]);
      g.backward(loss);
    }
    batch_loss /= options.batch;
    if (!std::isfinite(batch_loss)) {
      throw TrainingDiverged("training loss is not finite at step " + std::to_string(step));
    }
    for (auto* p : params) {
      for (auto& gval : p->grad()) gval *= inv_batch;
    }
    adam.step();

    TrainLogEntry entry{step, batch_loss, std::numeric_limits<double>::quiet_NaN()};
    if (step % options.eval_every == 0 || step == options.steps) {
      entry.heldout_loss = sequence_loss(weights, heldout);
      result.final_heldout_loss = entry.heldout_loss;
    }
    result.log.push_back(entry);
  }
  for (auto* p : params) p->set_requires_grad(false);
  if (!weights.all_finite()) throw TrainingDiverged("training produced non-finite weights");
  return result;
}

template double sequence_loss<float>(const Weights<float>&, const std::vector<TokenSeq>&);
template double sequence_loss<double>(const Weights<double>&, const std::vector<TokenSeq>&);
template TrainResult<float> train<float>(const ModelConfig&, const CorpusSpec&, const TrainOptions&);
template TrainResult<double> train<double>(const ModelConfig&, const CorpusSpec&, const TrainOptions&);

}  // namespace actlab
