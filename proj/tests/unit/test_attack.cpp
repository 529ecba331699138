#include <gtest/gtest.h>

#include <cmath>

#include "actlab/attack.hpp"
#include "actlab/finite_difference.hpp"
#include "test_support.hpp"

namespace actlab {
namespace {

const Model<double>& small_model() {
  static const Model<double> m(testing::small_trained_weights());
  return m;
}

AttackSpec spec_for(int a, int s, int t, int n = 1, double f = 1.0) {
  AttackSpec spec;
  spec.a = a;
  spec.s = s;
  spec.t = t;
  spec.n = n;
  spec.f = f;
  return spec;
}

TEST(AttackSpec, ValidatesInvariants) {
  EXPECT_NO_THROW(spec_for(1, 1, 1).validate());
  EXPECT_THROW(spec_for(0, 1, 1).validate(), std::invalid_argument);
  EXPECT_THROW(spec_for(3, 2, 1).validate(), std::invalid_argument);
  EXPECT_THROW(spec_for(1, 1, 0).validate(), std::invalid_argument);
  EXPECT_THROW(spec_for(1, 1, 1, 0).validate(), std::invalid_argument);
  EXPECT_THROW(spec_for(1, 1, 1, 1, 0.0).validate(), std::invalid_argument);
  auto s = spec_for(1, 1, 1);
  s.steps = -1;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(AttackOutcome, FractionAndFullSuccess) {
  const auto o = AttackOutcome::from_correct({true, false, true, true}, 0.5, 7);
  EXPECT_DOUBLE_EQ(o.success_fraction, 0.75);
  EXPECT_FALSE(o.full_success);
  const auto all = AttackOutcome::from_correct({true, true}, 0.1, 1);
  EXPECT_TRUE(all.full_success);
  EXPECT_EQ(all.success_fraction, 1.0);
  const std::vector<AttackOutcome> parts{o, all};
  const auto combined = combine_outcomes(parts);
  EXPECT_EQ(combined.per_token_correct.size(), 6u);
  EXPECT_DOUBLE_EQ(combined.success_fraction, 5.0 / 6.0);
}

TEST(AttackLoss, IsTheMeanOfPerPositionLosses) {
  const auto& m = small_model();
  const auto s = sample_random_tokens(32, 5, 1);
  const auto t = sample_random_tokens(32, 3, 2);
  const auto p = testing::random_tensor<double>(2, 16, 3, 0.5);
  const auto parts = per_position_losses(m, s, t, p);
  ASSERT_EQ(parts.size(), 3u);
  EXPECT_NEAR(attack_loss(m, s, t, p), (parts[0] + parts[1] + parts[2]) / 3.0, 1e-14);
}

TEST(AttackLoss, ZeroPerturbationEqualsTeacherForcedLossBitwise) {
  const auto& m = small_model();
  for (std::uint64_t k = 0; k < 10; ++k) {
    const auto s = sample_random_tokens(32, 1 + k % 6, 10 + k);
    const auto t = sample_random_tokens(32, 1 + k % 5, 20 + k);
    const auto zero = Tensor<double>::matrix(1 + k % s.size(), 16, 0.0);
    EXPECT_EQ(attack_loss(m, s, t, zero), teacher_forced_loss(m, s, t));
  }
}

TEST(AttackLoss, SinglePassMatchesLiteralPrefixLoop) {
  const auto& m = small_model();
  for (std::uint64_t k = 0; k < 5; ++k) {
    const auto s = sample_random_tokens(32, 4, 30 + k);
    const auto t = sample_random_tokens(32, 6, 40 + k);
    const auto p = testing::random_tensor<double>(3, 16, 50 + k, 0.7);
    EXPECT_NEAR(attack_loss(m, s, t, p), testing::literal_prefix_loss(m, s, t, p), 1e-10);
  }
}

TEST(AttackLoss, RejectsBadShapes) {
  const auto& m = small_model();
  const auto s = sample_random_tokens(32, 3, 1);
  const auto t = sample_random_tokens(32, 3, 2);
  EXPECT_THROW(attack_loss(m, s, t, Tensor<double>::matrix(4, 16)), std::invalid_argument);
  EXPECT_THROW(attack_loss(m, s, sample_random_tokens(32, 62, 3), Tensor<double>::matrix(1, 16)), std::length_error);
}

TEST(AttackLoss, GradientMatchesFiniteDifferences) {
  const auto& m = small_model();
  const auto s = sample_random_tokens(32, 4, 60);
  const auto t = sample_random_tokens(32, 3, 61);
  Tensor<double> p = testing::random_tensor<double>(2, 16, 62, 0.3);
  p.set_requires_grad(true);
  Graph<double> g;
  const auto w = m.bind(g);
  g.backward(attack_loss(g, m, w, s, t, g.leaf(p)));
  const auto fd = finite_difference_grad<double>([&](const Tensor<double>& q) { return attack_loss(m, s, t, q); },
                                                 Tensor<double>(p.shape(), std::vector<double>(p.data().begin(), p.data().end())),
                                                 1e-3);
  for (std::size_t i = 0; i < p.size(); ++i) {
    EXPECT_NEAR(p.grad()[i], fd[i], 1e-4 * std::max(std::abs(fd[i]), 1e-3)) << i;
  }
}

TEST(AttackLoss, SmallPlainGradientStepDescends) {
  const auto& m = small_model();
  for (std::uint64_t k = 0; k < 5; ++k) {
    const auto s = sample_random_tokens(32, 3, 70 + k);
    const auto t = sample_random_tokens(32, 4, 80 + k);
    Tensor<double> p = testing::random_tensor<double>(1, 16, 90 + k, 0.1);
    p.set_requires_grad(true);
    Graph<double> g;
    const auto w = m.bind(g);
    g.backward(attack_loss(g, m, w, s, t, g.leaf(p)));
    Tensor<double> next = Tensor<double>::matrix(1, 16);
    for (std::size_t i = 0; i < 16; ++i) next[i] = p[i] - 1e-4 * p.grad()[i];
    EXPECT_LT(attack_loss(m, s, t, next), attack_loss(m, s, t, p));
  }
}

TEST(Evaluate, CleanRolloutIsFullSuccessWithoutPerturbation) {
  const auto& m = small_model();
  const auto s = sample_random_tokens(32, 5, 100);
  const auto t = m.argmax_rollout(s, 6);
  const auto o = evaluate_attack(m, s, t, Tensor<double>::matrix(1, 16, 0.0));
  EXPECT_TRUE(o.full_success);
  EXPECT_EQ(o.success_fraction, 1.0);
}

TEST(Evaluate, TargetsAvoidingTheCleanArgmaxScoreZero) {
  const auto& m = small_model();
  const auto s = sample_random_tokens(32, 4, 101);
  std::vector<int> t;
  std::vector<int> seq = s;
  for (int i = 0; i < 5; ++i) {
    const auto z = m.logits(seq);
    const int best = argmax<double>(z.row(z.rows() - 1));
    const int other = (best + 1) % 32;
    t.push_back(other);
    seq.push_back(other);
  }
  const auto o = evaluate_attack(m, s, t, Tensor<double>::matrix(1, 16, 0.0));
  EXPECT_EQ(o.success_fraction, 0.0);
  EXPECT_FALSE(o.full_success);
}

TEST(Optimize, ZeroStepsReturnsZeroPerturbationAndCleanOutcome) {
  const auto& m = small_model();
  auto spec = spec_for(1, 3, 2);
  spec.steps = 0;
  spec.seed = 5;
  const std::vector<AttackPair> pairs{{sample_random_tokens(32, 3, 1), sample_random_tokens(32, 2, 2)}};
  const auto r = optimize_attack(m, std::span<const AttackPair>(pairs), spec);
  for (double v : r.perturbation.values.data()) EXPECT_EQ(v, 0.0);
  const auto clean = evaluate_attack(m, pairs[0].context, pairs[0].target, Tensor<double>::matrix(1, 16, 0.0));
  EXPECT_EQ(r.outcomes[0].per_token_correct, clean.per_token_correct);
  EXPECT_EQ(r.outcomes[0].steps_used, 0);
}

TEST(Optimize, SuccessfulAttackReproducesTargetUnderRollout) {
  const auto& m = small_model();
  auto spec = spec_for(2, 2, 2);
  spec.seed = 11;
  const std::vector<AttackPair> pairs{{sample_random_tokens(32, 2, 3), sample_random_tokens(32, 2, 4)}};
  const auto r = optimize_attack(m, std::span<const AttackPair>(pairs), spec);
  ASSERT_TRUE(r.combined.full_success);
  EXPECT_LT(r.combined.steps_used, spec.steps);
  EXPECT_EQ(m.argmax_rollout(pairs[0].context, 2, &r.perturbation.values), pairs[0].target);
  EXPECT_NE(m.argmax_rollout(pairs[0].context, 2), pairs[0].target);
}

TEST(Optimize, MaskedEntriesStayExactlyZero) {
  const auto& m = small_model();
  auto spec = spec_for(2, 4, 3, 2, 0.5);
  spec.steps = 25;
  spec.seed = 12;
  std::vector<AttackPair> pairs;
  for (std::uint64_t k = 0; k < 2; ++k) {
    pairs.push_back({sample_random_tokens(32, 4, 20 + k), sample_random_tokens(32, 3, 30 + k)});
  }
  const auto r = optimize_attack(m, std::span<const AttackPair>(pairs), spec);
  EXPECT_TRUE(r.perturbation.respects_mask());
  EXPECT_EQ(r.perturbation.mask, attack_mask(spec, 16));
  std::size_t controlled = 0;
  for (auto b : r.perturbation.mask) controlled += b;
  EXPECT_EQ(controlled, 2u * 8u);
  EXPECT_EQ(r.outcomes.size(), 2u);
  EXPECT_EQ(r.combined.per_token_correct.size(), 6u);
}

TEST(Optimize, IsDeterministicPerSeed) {
  const auto& m = small_model();
  auto spec = spec_for(1, 2, 4);
  spec.steps = 30;
  spec.seed = 13;
  const std::vector<AttackPair> pairs{{sample_random_tokens(32, 2, 5), sample_random_tokens(32, 4, 6)}};
  const auto a = optimize_attack(m, std::span<const AttackPair>(pairs), spec);
  const auto b = optimize_attack(m, std::span<const AttackPair>(pairs), spec);
  EXPECT_EQ(a.perturbation.values, b.perturbation.values);
  EXPECT_EQ(a.combined.final_loss, b.combined.final_loss);
}

TEST(Optimize, RejectsMismatchedPairs) {
  const auto& m = small_model();
  auto spec = spec_for(1, 2, 2, 2);
  const std::vector<AttackPair> pairs{{sample_random_tokens(32, 2, 1), sample_random_tokens(32, 2, 2)},
                                      {sample_random_tokens(32, 3, 3), sample_random_tokens(32, 2, 4)}};
  EXPECT_THROW(optimize_attack(m, std::span<const AttackPair>(pairs), spec), std::invalid_argument);
}

TEST(TokenAttack, SinglePositionMatchesBruteForceScan) {
  const auto& m = small_model();
  for (std::uint64_t k = 0; k < 4; ++k) {
    const auto s = sample_random_tokens(32, 4, 200 + k);
    const auto t = sample_random_tokens(32, 3, 300 + k);
    const auto r = greedy_token_attack(m, s, t, 1);
    const auto losses = testing::substitution_losses(m, s, t);
    EXPECT_EQ(r.context[0], testing::argmin_lowest(losses));
    for (std::size_t i = 1; i < s.size(); ++i) EXPECT_EQ(r.context[i], s[i]);
    ASSERT_EQ(r.loss_trace.size(), 1u);
    EXPECT_NEAR(r.loss_trace[0], losses[static_cast<std::size_t>(r.context[0])], 1e-12);
  }
}

TEST(TokenAttack, LossTraceNeverIncreases) {
  const auto& m = small_model();
  for (std::uint64_t k = 0; k < 3; ++k) {
    const auto s = sample_random_tokens(32, 5, 400 + k);
    const auto t = sample_random_tokens(32, 2, 500 + k);
    const auto r = greedy_token_attack(m, s, t, 4);
    ASSERT_EQ(r.loss_trace.size(), 4u);
    EXPECT_LE(r.loss_trace[0], teacher_forced_loss(m, s, t));
    for (std::size_t i = 1; i < r.loss_trace.size(); ++i) EXPECT_LE(r.loss_trace[i], r.loss_trace[i - 1]);
    const auto check = evaluate_attack(m, r.context, t, Tensor<double>::matrix(1, 16, 0.0));
    EXPECT_EQ(check.per_token_correct, r.outcome.per_token_correct);
    EXPECT_EQ(check.full_success, m.argmax_rollout(r.context, t.size()) == t);
  }
}

TEST(TokenAttack, RejectsAttackLongerThanContext) {
  const auto& m = small_model();
  EXPECT_THROW(greedy_token_attack(m, sample_random_tokens(32, 2, 1), sample_random_tokens(32, 2, 2), 3),
               std::invalid_argument);
}

}  // namespace
}  // namespace actlab
