#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <iterator>

#include "actlab/corpus.hpp"
#include "actlab/train.hpp"
#include "actlab/weight_io.hpp"
#include "actlab/workflow.hpp"
#include "test_support.hpp"

namespace actlab {
namespace {

TEST(Corpus, TransitionsAreNormalizedAndSparse) {
  CorpusSpec spec;
  spec.vocab = 16;
  spec.branching = 4;
  const MarkovCorpus corpus(spec);
  for (int a = 0; a < 16; ++a) {
    for (int b = 0; b < 16; ++b) {
      double total = 0;
      int nonzero = 0;
      for (int c = 0; c < 16; ++c) {
        const double p = corpus.probability(a, b, c);
        total += p;
        nonzero += p > 0 ? 1 : 0;
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
      EXPECT_LE(nonzero, 4);
    }
  }
  EXPECT_LT(corpus.mean_conditional_entropy(), std::log(4.0));
}

TEST(Corpus, SamplesFollowTheChain) {
  const MarkovCorpus corpus(CorpusSpec{});
  Rng rng(3);
  const auto seq = corpus.sample(200, rng);
  ASSERT_EQ(seq.size(), 200u);
  for (std::size_t i = 2; i < seq.size(); ++i) EXPECT_GT(corpus.probability(seq[i - 2], seq[i - 1], seq[i]), 0.0);
}

TEST(Train, ZeroStepsReturnsInitialization) {
  const auto c = testing::small_config();
  TrainOptions opt;
  opt.steps = 0;
  opt.seq_len = 16;
  CorpusSpec corpus;
  corpus.vocab = c.vocab;
  const auto result = train<double>(c, corpus, opt);
  EXPECT_TRUE(result.weights == Weights<double>::initialize(c, derive_seed(opt.seed, "init")));
}

TEST(Train, SameSeedGivesIdenticalWeightFiles) {
  const auto dir = testing::fresh_dir("train_determinism");
  ExperimentConfig cfg;
  cfg.model = testing::small_config();
  cfg.corpus.vocab = cfg.model.vocab;
  cfg.train.steps = 20;
  cfg.train.seq_len = 16;
  train_and_save<float>(cfg, dir / "a", nullptr);
  train_and_save<float>(cfg, dir / "b", nullptr);
  std::ifstream a(dir / "a" / "model.bin", std::ios::binary), b(dir / "b" / "model.bin", std::ios::binary);
  const std::string ba((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  const std::string bb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  EXPECT_FALSE(ba.empty());
  EXPECT_EQ(ba, bb);
  EXPECT_TRUE(std::filesystem::exists(dir / "a" / "train_log.csv"));
}

TEST(Train, RejectsInvalidOptions) {
  const auto c = testing::small_config();
  TrainOptions opt;
  opt.seq_len = 100;
  EXPECT_THROW(opt.validate(c), std::invalid_argument);
  opt = TrainOptions{};
  opt.lr = 0;
  EXPECT_THROW(opt.validate(c), std::invalid_argument);
}

TEST(Train, DivergenceIsReported) {
  const auto c = testing::small_config();
  TrainOptions opt;
  opt.steps = 50;
  opt.seq_len = 16;
  opt.lr = 1e30;
  CorpusSpec corpus;
  corpus.vocab = c.vocab;
  EXPECT_THROW(train<float>(c, corpus, opt), TrainingDiverged);
}

// The default tiny recipe: held-out loss must fall below 0.7x its initial value.
TEST(Train, PinnedModelLearnsTheCorpus) {
  const auto cfg = testing::pinned_config();
  const auto& w = testing::pinned_weights();
  const MarkovCorpus corpus(cfg.corpus);
  const auto heldout = heldout_set(corpus, 16, cfg.train.seq_len);
  const double initial =
      sequence_loss(Weights<float>::initialize(cfg.model, derive_seed(cfg.train.seed, "init")), heldout);
  const double trained = sequence_loss(w, heldout);
  EXPECT_LT(trained, 0.7 * initial);
}

TEST(Train, PinnedModelBeatsChanceByTenfold) {
  const auto cfg = testing::pinned_config();
  const Model<float> m(testing::pinned_weights());
  const MarkovCorpus corpus(cfg.corpus);
  Rng rng(derive_seed(99, "accuracy"));
  int hits = 0, total = 0;
  for (int k = 0; k < 16; ++k) {
    const auto seq = corpus.sample(static_cast<std::size_t>(cfg.train.seq_len), rng);
    const auto z = m.logits(seq);
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
      hits += argmax<float>(z.row(i)) == seq[i + 1] ? 1 : 0;
      ++total;
    }
  }
  EXPECT_GT(static_cast<double>(hits) / total, 10.0 / cfg.model.vocab);
}

}  // namespace
}  // namespace actlab
