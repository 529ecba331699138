#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <set>

#include "actlab/attack.hpp"
#include "actlab/random.hpp"

namespace actlab {
namespace {

TEST(Random, SampledTokensPassChiSquareUniformity) {
  constexpr int kVocab = 64;
  constexpr std::size_t kDraws = 100000;
  const auto tokens = sample_random_tokens(kVocab, kDraws, 2024);
  std::vector<double> counts(kVocab, 0.0);
  for (int t : tokens) counts[static_cast<std::size_t>(t)] += 1;
  const double expected = static_cast<double>(kDraws) / kVocab;
  double stat = 0;
  for (double c : counts) stat += (c - expected) * (c - expected) / expected;
  const boost::math::chi_squared dist(kVocab - 1);
  const double p_value = boost::math::cdf(boost::math::complement(dist, stat));
  EXPECT_GT(p_value, 0.001) << "chi2 = " << stat;
}

TEST(Random, TokenSamplingIsDeterministicAndInRange) {
  EXPECT_TRUE(sample_random_tokens(32, 0, 1).empty());
  const auto a = sample_random_tokens(32, 50, 77);
  EXPECT_EQ(a, sample_random_tokens(32, 50, 77));
  EXPECT_NE(a, sample_random_tokens(32, 50, 78));
  for (int t : a) {
    EXPECT_GE(t, 0);
    EXPECT_LT(t, 32);
  }
}

TEST(Random, UniformIndexStaysBelowBound) {
  Rng rng(5);
  for (std::uint64_t bound : {1ULL, 2ULL, 3ULL, 1000ULL, (1ULL << 63) + 7}) {
    for (int i = 0; i < 200; ++i) EXPECT_LT(uniform_index(rng, bound), bound);
  }
  EXPECT_THROW(uniform_index(rng, 0), std::invalid_argument);
}

TEST(Random, UniformUnitAndNormalMoments) {
  Rng rng(6);
  double su = 0, sn = 0, sn2 = 0;
  constexpr int kN = 200000;
  for (int i = 0; i < kN; ++i) {
    const double u = uniform_unit(rng);
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    su += u;
    const double z = standard_normal(rng);
    sn += z;
    sn2 += z * z;
  }
  EXPECT_NEAR(su / kN, 0.5, 4 * std::sqrt(1.0 / 12 / kN));
  EXPECT_NEAR(sn / kN, 0.0, 4 / std::sqrt(kN));
  EXPECT_NEAR(sn2 / kN, 1.0, 4 * std::sqrt(2.0 / kN));
}

TEST(Random, SampleWithoutReplacementIsDistinct) {
  Rng rng(7);
  const auto pick = sample_without_replacement(rng, 20, 20);
  EXPECT_EQ(std::set<std::size_t>(pick.begin(), pick.end()).size(), 20u);
  EXPECT_THROW(sample_without_replacement(rng, 3, 4), std::invalid_argument);
}

TEST(Random, DerivedSeedsSeparateStreams) {
  EXPECT_EQ(derive_seed(1, "mask", 0), derive_seed(1, "mask", 0));
  EXPECT_NE(derive_seed(1, "mask", 0), derive_seed(1, "mask", 1));
  EXPECT_NE(derive_seed(1, "mask", 0), derive_seed(1, "context", 0));
  EXPECT_NE(derive_seed(1, "mask", 0), derive_seed(2, "mask", 0));
  EXPECT_NE(SeedHasher(0).add(std::uint64_t{1}).add(std::uint64_t{2}).value(),
            SeedHasher(0).add(std::uint64_t{2}).add(std::uint64_t{1}).value());
}

TEST(Mask, FullFractionSelectsEverything) {
  const auto m = make_mask(32, 1.0, 3);
  for (bool b : m) EXPECT_TRUE(b);
}

TEST(Mask, HalfOf512IsExactly256) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto m = make_mask(512, 0.5, seed);
    EXPECT_EQ(std::count(m.begin(), m.end(), true), 256);
  }
}

TEST(Mask, RejectsEmptyOrInvalidFractions) {
  EXPECT_THROW(make_mask(16, 0.01, 1), std::invalid_argument);
  EXPECT_THROW(make_mask(16, 0.0, 1), std::invalid_argument);
  EXPECT_THROW(make_mask(16, 1.5, 1), std::invalid_argument);
}

TEST(Mask, InclusionFrequencyIsUniformPerDimension) {
  constexpr int kD = 16;
  constexpr int kSeeds = 10000;
  constexpr double kF = 0.25;
  std::vector<int> hits(kD, 0);
  for (int seed = 0; seed < kSeeds; ++seed) {
    const auto m = make_mask(kD, kF, static_cast<std::uint64_t>(seed));
    for (int k = 0; k < kD; ++k) hits[static_cast<std::size_t>(k)] += m[static_cast<std::size_t>(k)] ? 1 : 0;
  }
  const double sigma = std::sqrt(kF * (1 - kF) / kSeeds);
  for (int h : hits) EXPECT_NEAR(static_cast<double>(h) / kSeeds, kF, 3 * sigma);
}

TEST(Mask, AttackMaskRowsAreIndependent) {
  AttackSpec spec;
  spec.a = 4;
  spec.s = 4;
  spec.f = 0.5;
  spec.seed = 99;
  const auto rows = attack_mask(spec, 32);
  ASSERT_EQ(rows.size(), 4u * 32u);
  bool differ = false;
  for (int r = 0; r < 4; ++r) {
    int count = 0;
    for (int c = 0; c < 32; ++c) count += rows[static_cast<std::size_t>(r * 32 + c)];
    EXPECT_EQ(count, 16);
    if (r > 0) {
      for (int c = 0; c < 32; ++c) differ |= rows[static_cast<std::size_t>(r * 32 + c)] != rows[static_cast<std::size_t>(c)];
    }
  }
  EXPECT_TRUE(differ);
}

}  // namespace
}  // namespace actlab
