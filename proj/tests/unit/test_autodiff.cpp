#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "actlab/finite_difference.hpp"
#include "actlab/graph.hpp"
#include "test_support.hpp"

namespace actlab {
namespace {

using testing::random_tensor;
using Td = Tensor<double>;

// Builds a scalar from one differentiable input; the rest are constants.
using Builder = std::function<Var(Graph<double>&, Var)>;

double eval_scalar(const Builder& build, const Td& x) {
  Graph<double> g;
  Var out = build(g, g.constant(x));
  return g.value(out)[0];
}

Td analytic_grad(const Builder& build, Td x) {
  x.set_requires_grad(true);
  Graph<double> g;
  Var out = build(g, g.leaf(x));
  g.backward(out);
  return Td(x.shape(), std::vector<double>(x.grad().begin(), x.grad().end()));
}

// Max relative error over entries whose analytic magnitude exceeds 1e-8.
double max_rel_error(const Td& analytic, const Td& numeric) {
  double worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i];
    if (std::abs(a) <= 1e-8) {
      EXPECT_NEAR(numeric[i], a, 1e-7) << "entry " << i;
      continue;
    }
    worst = std::max(worst, std::abs(a - numeric[i]) / std::abs(a));
  }
  return worst;
}

void check_gradient(const Builder& build, const Td& x, double tol = 1e-5) {
  const Td a = analytic_grad(build, x);
  const Td n = finite_difference_grad<double>([&](const Td& p) { return eval_scalar(build, p); }, x, 1e-4);
  EXPECT_LT(max_rel_error(a, n), tol);
}

// A fixed random projection turns a matrix output into a scalar with
// non-trivial upstream gradients.
Var project(Graph<double>& g, Var y, std::uint64_t seed) {
  const auto& v = g.value(y);
  Var w = g.constant(random_tensor<double>(v.rows(), v.cols(), seed));
  return g.sum(g.mul(y, w));
}

TEST(Autodiff, MatmulGradientMatchesFiniteDifferences) {
  const Td b = random_tensor<double>(4, 3, 11);
  check_gradient([&](Graph<double>& g, Var x) { return project(g, g.matmul(x, g.constant(b)), 1); },
                 random_tensor<double>(5, 4, 12));
  check_gradient([&](Graph<double>& g, Var x) { return project(g, g.matmul(g.constant(b), x), 2); },
                 random_tensor<double>(3, 2, 13));
}

TEST(Autodiff, MatmulTransposedAndScaledGradient) {
  const Td b = random_tensor<double>(6, 4, 21);
  MatmulOptions opt{true, 0.37};
  check_gradient([&](Graph<double>& g, Var x) { return project(g, g.matmul(x, g.constant(b), opt), 3); },
                 random_tensor<double>(5, 4, 22));
  check_gradient([&](Graph<double>& g, Var x) { return project(g, g.matmul(g.constant(b), x, opt), 4); },
                 random_tensor<double>(3, 4, 23));
}

TEST(Autodiff, ElementwiseGradients) {
  const Td other = random_tensor<double>(3, 5, 31);
  check_gradient([&](Graph<double>& g, Var x) { return project(g, g.add(x, g.constant(other)), 5); },
                 random_tensor<double>(3, 5, 32));
  check_gradient([&](Graph<double>& g, Var x) { return project(g, g.mul(x, g.constant(other)), 6); },
                 random_tensor<double>(3, 5, 33));
  check_gradient([&](Graph<double>& g, Var x) { return project(g, g.mul(x, x), 7); }, random_tensor<double>(3, 5, 34));
}

TEST(Autodiff, BroadcastAddGradient) {
  const Td m = random_tensor<double>(4, 3, 41);
  check_gradient([&](Graph<double>& g, Var row) { return project(g, g.add_row(g.constant(m), row), 8); },
                 random_tensor<double>(1, 3, 42));
  const Td r = random_tensor<double>(1, 3, 43);
  check_gradient([&](Graph<double>& g, Var x) { return project(g, g.add_row(x, g.constant(r)), 9); },
                 random_tensor<double>(4, 3, 44));
}

TEST(Autodiff, GeluGradient) {
  check_gradient([&](Graph<double>& g, Var x) { return project(g, g.gelu(x), 10); },
                 random_tensor<double>(4, 6, 51, 2.0));
}

TEST(Autodiff, SoftmaxGradient) {
  check_gradient([&](Graph<double>& g, Var x) { return project(g, g.softmax(x), 11); },
                 random_tensor<double>(4, 6, 61, 2.0));
}

TEST(Autodiff, LayerNormGradientForAllInputs) {
  const Td x0 = random_tensor<double>(3, 8, 71);
  const Td gain = random_tensor<double>(1, 8, 72);
  const Td bias = random_tensor<double>(1, 8, 73);
  check_gradient(
      [&](Graph<double>& g, Var x) { return project(g, g.layer_norm(x, g.constant(gain), g.constant(bias)), 12); },
      x0);
  check_gradient(
      [&](Graph<double>& g, Var gn) { return project(g, g.layer_norm(g.constant(x0), gn, g.constant(bias)), 13); },
      gain);
  check_gradient(
      [&](Graph<double>& g, Var b) { return project(g, g.layer_norm(g.constant(x0), g.constant(gain), b), 14); },
      bias);
}

TEST(Autodiff, GatherRowsGradientAccumulatesRepeats) {
  const std::vector<int> ids{2, 0, 2, 3};
  check_gradient([&](Graph<double>& g, Var table) { return project(g, g.gather_rows(table, ids), 15); },
                 random_tensor<double>(5, 3, 81));
}

TEST(Autodiff, CausalMaskGradientIsZeroAboveDiagonal) {
  const Builder build = [&](Graph<double>& g, Var x) { return project(g, g.softmax(g.causal_mask(x)), 16); };
  const Td x = random_tensor<double>(5, 5, 91);
  check_gradient(build, x);
  const Td a = analytic_grad(build, x);
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = r + 1; c < 5; ++c) EXPECT_EQ(a(r, c), 0.0);
  }
}

TEST(Autodiff, CrossEntropyGradient) {
  const std::vector<int> targets{1, -1, 4, 0};
  check_gradient([&](Graph<double>& g, Var x) { return g.cross_entropy(x, targets); },
                 random_tensor<double>(4, 5, 101, 2.0));
}

TEST(Autodiff, SoftmaxOfZerosIsUniform) {
  Graph<double> g;
  Var y = g.softmax(g.constant(Td::matrix(1, 4, 0.0)));
  for (double v : g.value(y).data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Autodiff, CrossEntropyOfTwoEqualLogitsIsLn2) {
  Graph<double> g;
  const std::vector<int> target{0};
  Var l = g.cross_entropy(g.constant(Td::matrix(1, 2, 0.0)), target);
  EXPECT_NEAR(g.value(l)[0], std::log(2.0), 1e-15);
}

TEST(Autodiff, MatmulMatchesNaiveLoop) {
  const Td a = random_tensor<double>(3, 4, 111);
  const Td b = random_tensor<double>(4, 2, 112);
  Graph<double> g;
  const Td& c = g.value(g.matmul(g.constant(a), g.constant(b)));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double ref = 0;
      for (std::size_t k = 0; k < 4; ++k) ref += a(i, k) * b(k, j);
      EXPECT_NEAR(c(i, j), ref, 1e-12);
    }
  }
}

TEST(Autodiff, SoftmaxRowsArePositiveAndSumToOne) {
  Graph<float> g;
  const auto x = random_tensor<float>(6, 9, 121, 5.0);
  const auto& y = g.value(g.softmax(g.constant(x)));
  for (std::size_t r = 0; r < y.rows(); ++r) {
    double total = 0;
    for (float v : y.row(r)) {
      EXPECT_GE(v, 0.0f);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(Autodiff, LayerNormNormalizesEachRow) {
  Graph<double> g;
  const auto x = random_tensor<double>(5, 16, 131, 3.0);
  const auto& y = g.value(g.layer_norm(g.constant(x), g.constant(Td::matrix(1, 16, 1.0)),
                                       g.constant(Td::matrix(1, 16, 0.0))));
  for (std::size_t r = 0; r < y.rows(); ++r) {
    double mean = 0, var = 0;
    for (double v : y.row(r)) mean += v;
    mean /= 16;
    for (double v : y.row(r)) var += (v - mean) * (v - mean);
    var /= 16;
    EXPECT_LT(std::abs(mean), 1e-6);
    EXPECT_NEAR(var, 1.0, 1e-4);
  }
}

TEST(Autodiff, SumGradientIsAllOnes) {
  Td x = random_tensor<double>(3, 4, 141);
  x.set_requires_grad(true);
  Graph<double> g;
  g.backward(g.sum(g.leaf(x)));
  for (double v : x.grad()) EXPECT_EQ(v, 1.0);
}

TEST(Autodiff, CrossEntropyGradientIsSoftmaxMinusOneHot) {
  Td z(Shape{1, 4}, std::vector<double>{0.5, -1.0, 2.0, 0.1});
  z.set_requires_grad(true);
  Graph<double> g;
  const std::vector<int> target{2};
  g.backward(g.cross_entropy(g.leaf(z), target));
  double norm = 0;
  for (double v : z.data()) norm += std::exp(v);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(z.grad()[i], std::exp(z[i]) / norm - (i == 2 ? 1.0 : 0.0), 1e-15);
  }
}

TEST(Autodiff, RepeatedBackwardAccumulatesUntilReset) {
  Td x = random_tensor<double>(2, 2, 151);
  x.set_requires_grad(true);
  for (int k = 0; k < 2; ++k) {
    Graph<double> g;
    g.backward(g.sum(g.leaf(x)));
  }
  for (double v : x.grad()) EXPECT_EQ(v, 2.0);
  x.zero_grad();
  for (double v : x.grad()) EXPECT_EQ(v, 0.0);
}

TEST(Autodiff, ConstantsReceiveNoGradient) {
  Td x = random_tensor<double>(2, 2, 161);
  Td c = random_tensor<double>(2, 2, 162);
  x.set_requires_grad(true);
  Graph<double> g;
  g.backward(g.sum(g.mul(g.leaf(x), g.constant(c))));
  EXPECT_FALSE(c.requires_grad());
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(x.grad()[i], c[i]);
}

TEST(Autodiff, ConsumedGraphRejectsFurtherUse) {
  Td x = random_tensor<double>(2, 2, 171);
  x.set_requires_grad(true);
  Graph<double> g;
  Var loss = g.sum(g.leaf(x));
  g.backward(loss);
  EXPECT_TRUE(g.consumed());
  EXPECT_THROW(g.backward(loss), std::logic_error);
  EXPECT_THROW(g.sum(loss), std::logic_error);
}

TEST(Autodiff, BackwardRequiresScalar) {
  Graph<double> g;
  Var y = g.constant(Td::matrix(2, 2, 1.0));
  EXPECT_THROW(g.backward(y), ShapeError);
}

TEST(Autodiff, ShapeMismatchThrows) {
  Graph<double> g;
  Var a = g.constant(Td::matrix(2, 3));
  Var b = g.constant(Td::matrix(2, 3));
  EXPECT_THROW(g.matmul(a, b), ShapeError);
  EXPECT_THROW(g.add(a, g.constant(Td::matrix(3, 2))), ShapeError);
  EXPECT_THROW(g.add_row(a, g.constant(Td::matrix(1, 2))), ShapeError);
  EXPECT_THROW(g.causal_mask(a), ShapeError);
  const std::vector<int> short_targets{0};
  EXPECT_THROW(g.cross_entropy(a, short_targets), ShapeError);
}

TEST(Autodiff, NonFiniteOutputThrows) {
  Graph<double> g;
  Var big = g.constant(Td::matrix(1, 1, 1e200));
  EXPECT_THROW(g.mul(big, big), NonFiniteError);
  const Td bad(Shape{1, 1}, std::vector<double>{std::nan("")});
  EXPECT_THROW(g.constant(bad), NonFiniteError);
}

TEST(Autodiff, LeafWithoutGradSlotIsRejected) {
  Td x = Td::matrix(2, 2, 1.0);
  Graph<double> g;
  EXPECT_THROW(g.leaf(x), std::logic_error);
}

TEST(FiniteDifference, SquareAtThree) {
  const Td x(Shape{1}, std::vector<double>{3.0});
  const Td grad = finite_difference_grad<double>([](const Td& p) { return p[0] * p[0]; }, x, 1e-4);
  EXPECT_NEAR(grad[0], 6.0, 1e-6);
}

TEST(FiniteDifference, ConstantGivesZero) {
  const Td x = random_tensor<double>(2, 3, 181);
  const Td grad = finite_difference_grad<double>([](const Td&) { return 4.5; }, x, 1e-3);
  for (double v : grad.data()) EXPECT_EQ(v, 0.0);
}

TEST(FiniteDifference, RejectsBadStepAndNonFiniteValues) {
  const Td x = random_tensor<double>(1, 2, 191);
  auto f = [](const Td&) { return 1.0; };
  EXPECT_THROW(finite_difference_grad<double>(f, x, 0.0), std::invalid_argument);
  EXPECT_THROW(finite_difference_grad<double>([](const Td&) { return std::nan(""); }, x, 1e-3), NonFiniteError);
}

TEST(Tensor, ShapeInvariants) {
  EXPECT_THROW(Td(Shape{2, 3}, std::vector<double>(5)), ShapeError);
  Td t(Shape{2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_FALSE(t.requires_grad());
  t.set_requires_grad(true);
  EXPECT_EQ(t.grad().size(), t.size());
  const Td empty(Shape{0, 4});
  EXPECT_EQ(empty.size(), 0u);
}

}  // namespace
}  // namespace actlab
