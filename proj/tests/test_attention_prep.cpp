#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "casa/attention_prep.hpp"
#include "oracles.hpp"

namespace {

using casa::Grid;

Grid random_grid(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Grid g(r, c);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = u(rng);
  return g;
}

TEST(AverageStack, TwoConstantSlices) {
  std::vector<Grid> stack = {Grid::Constant(2, 2, 1.0), Grid::Constant(2, 2, 3.0)};
  EXPECT_TRUE(casa::average_stack(std::span<const Grid>(stack)).isApproxToConstant(2.0, 0.0));
}

TEST(AverageStack, SingleSliceIsIdentity) {
  std::mt19937_64 rng(1);
  std::vector<Grid> stack = {random_grid(4, 4, rng)};
  EXPECT_EQ(casa::average_stack(std::span<const Grid>(stack)), stack[0]);
}

TEST(AverageStack, MatchesSummationOracle) {
  std::mt19937_64 rng(2);
  std::vector<Grid> stack;
  std::vector<Eigen::MatrixXd> plain;
  for (int b = 0; b < 5; ++b) {
    stack.push_back(random_grid(6, 6, rng));
    plain.emplace_back(stack.back());
  }
  Grid got = casa::average_stack(std::span<const Grid>(stack));
  EXPECT_LE((Eigen::MatrixXd(got) - oracle::mean_of(plain)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(AverageStack, PermutationInvariant) {
  std::mt19937_64 rng(3);
  std::vector<Grid> stack;
  for (int b = 0; b < 6; ++b) stack.push_back(random_grid(5, 5, rng));
  Grid a = casa::average_stack(std::span<const Grid>(stack));
  std::shuffle(stack.begin(), stack.end(), rng);
  Grid b = casa::average_stack(std::span<const Grid>(stack));
  EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(AverageStack, Errors) {
  std::vector<Grid> empty;
  EXPECT_THROW(casa::average_stack(std::span<const Grid>(empty)), casa::DataError);
  std::vector<Grid> bad = {Grid::Constant(2, 2, std::nan(""))};
  EXPECT_THROW(casa::average_stack(std::span<const Grid>(bad)), casa::DataError);
}

TEST(AverageStack, FromRank3Array) {
  casa::DenseArray arr({2, 2, 2}, std::vector<float>{1, 1, 1, 1, 3, 3, 3, 3});
  EXPECT_TRUE(casa::average_stack(arr).isApproxToConstant(2.0, 0.0));
}

TEST(Upsample, ConstantStaysConstant) {
  for (int gamma : {1, 2, 3, 5}) {
    Grid up = casa::upsample(Grid::Constant(3, 3, 0.37), gamma);
    EXPECT_EQ(up.rows(), 3 * gamma);
    EXPECT_TRUE((up.array() == 0.37).all()) << "gamma " << gamma;
  }
}

TEST(Upsample, GammaOneIsIdentity) {
  std::mt19937_64 rng(4);
  Grid g = random_grid(5, 5, rng);
  EXPECT_EQ(casa::upsample(g, 1), g);
}

TEST(Upsample, CheckerMatchesReferenceInterpolator) {
  Grid g(2, 2);
  g << 0, 1, 1, 0;
  Grid up = casa::upsample(g, 2);
  Eigen::MatrixXd ref = oracle::bilinear(Eigen::MatrixXd(g), 4, 4);
  EXPECT_LE((Eigen::MatrixXd(up) - ref).cwiseAbs().maxCoeff(), 1e-12);
  // Sample coordinates are 0, 1/3, 2/3, 1 on both axes; v = x(1-y) + y(1-x).
  EXPECT_NEAR(up(1, 1), 4.0 / 9.0, 1e-12);
  EXPECT_NEAR(up(0, 1), 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(up(1, 2), 5.0 / 9.0, 1e-12);
  EXPECT_EQ(up(0, 3), 1.0);
  EXPECT_EQ(up(3, 3), 0.0);
}

TEST(Upsample, RandomMatchesReferenceAndStaysInRange) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Grid g = random_grid(4 + trial % 5, 4 + trial % 5, rng, -2.0, 3.0);
    const int gamma = 2 + trial % 3;
    Grid up = casa::upsample(g, gamma);
    Eigen::MatrixXd ref = oracle::bilinear(Eigen::MatrixXd(g), g.rows() * gamma, g.cols() * gamma);
    EXPECT_LE((Eigen::MatrixXd(up) - ref).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_GE(up.minCoeff(), g.minCoeff());
    EXPECT_LE(up.maxCoeff(), g.maxCoeff());
  }
}

TEST(Upsample, RejectsGammaBelowOne) {
  EXPECT_THROW(casa::upsample(Grid::Zero(2, 2), 0), casa::ParameterError);
}

TEST(Flatten, RowMajorOrder) {
  Grid g(2, 2);
  g << 1, 2, 3, 4;
  auto m = casa::flatten(g);
  EXPECT_EQ(m.side, 2);
  EXPECT_EQ(m.values, (Eigen::Vector4d(1, 2, 3, 4)));
}

TEST(Flatten, SingleCell) {
  auto m = casa::flatten(Grid::Constant(1, 1, 7.0));
  EXPECT_EQ(m.values.size(), 1);
  EXPECT_EQ(m.values[0], 7.0);
}

TEST(Flatten, RoundTripsThroughReshape) {
  std::mt19937_64 rng(6);
  Grid g = random_grid(8, 8, rng);
  EXPECT_EQ(casa::reshape(casa::flatten(g)), g);
}

TEST(Flatten, RejectsNonSquare) {
  EXPECT_THROW(casa::flatten(Grid::Zero(2, 3)), casa::ShapeError);
}

TEST(Symmetrize, SimpleExample) {
  Eigen::Matrix2d s;
  s << 0, 2, 0, 0;
  auto a = casa::symmetrize(s);
  Eigen::Matrix2d expect;
  expect << 0, 1, 1, 0;
  EXPECT_EQ(a.weights, expect);
  EXPECT_TRUE(a.symmetric);
}

TEST(Symmetrize, SymmetricInputIsFixedPoint) {
  std::mt19937_64 rng(7);
  Eigen::MatrixXd s = oracle::random_affinity(10, rng);
  EXPECT_EQ(casa::symmetrize(s).weights, s);
}

TEST(Symmetrize, RandomOutputIsExactlySymmetricAndIdempotent) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::MatrixXd s(16, 16);
    for (auto& x : s.reshaped()) x = u(rng);
    auto a = casa::symmetrize(s);
    EXPECT_TRUE(a.weights == a.weights.transpose());
    EXPECT_GE(a.weights.minCoeff(), 0.0);
    EXPECT_EQ(casa::symmetrize(a.weights).weights, a.weights);
  }
}

TEST(Symmetrize, AblationPassesThrough) {
  Eigen::Matrix2d s;
  s << 0, 2, 0, 0;
  auto a = casa::symmetrize(s, true);
  EXPECT_EQ(a.weights, Eigen::MatrixXd(s));
  EXPECT_FALSE(a.symmetric);
}

TEST(Symmetrize, Errors) {
  Eigen::Matrix2d neg;
  neg << 0, -1, 0, 0;
  EXPECT_THROW(casa::symmetrize(neg), casa::DataError);
  EXPECT_THROW(casa::symmetrize(Eigen::MatrixXd::Zero(2, 3)), casa::ShapeError);
}

TEST(Confidence, ZeroSaliencyGivesQuarter) {
  casa::SaliencyMap m(Eigen::VectorXd::Zero(4), 2);
  for (double alpha : {0.1, 1.0, 7.0}) {
    auto w = casa::confidence(m, alpha, false, 1e-8);
    EXPECT_TRUE((w.diag.array() == 0.25).all());
  }
}

TEST(Confidence, UniformAblationIsAllOnes) {
  std::mt19937_64 rng(9);
  casa::SaliencyMap m(oracle::random_vec(9, rng), 3);
  auto w = casa::confidence(m, 3.0, true, 1e-8);
  EXPECT_TRUE((w.diag.array() == 1.0).all());
}

TEST(Confidence, MatchesScalarSigmoidOracle) {
  casa::SaliencyMap m(Eigen::VectorXd::Ones(1), 1);
  auto w = casa::confidence(m, 2.0, false, 1e-8);
  EXPECT_NEAR(w.diag[0], oracle::sigmoid_squared(2.0), 1e-15);
  EXPECT_NEAR(w.diag[0], 0.7758034925743758, 1e-15);
}

TEST(Confidence, FloorAppliesToUnderflow) {
  casa::SaliencyMap m(Eigen::VectorXd::Constant(1, -1e4), 1);
  auto w = casa::confidence(m, 1.0, false, 1e-8);
  EXPECT_EQ(w.diag[0], 1e-8);
}

TEST(Confidence, BoundedAndMonotone) {
  std::mt19937_64 rng(10);
  casa::SaliencyMap m(oracle::random_vec(64, rng, -5, 5), 8);
  auto w = casa::confidence(m, 1.7, false, 1e-8);
  EXPECT_GT(w.diag.minCoeff(), 0.0);
  EXPECT_LE(w.diag.maxCoeff(), 1.0);
  for (Eigen::Index i = 0; i < 64; ++i)
    for (Eigen::Index j = 0; j < 64; ++j)
      if (m.values[i] >= m.values[j]) EXPECT_GE(w.diag[i], w.diag[j]);
}

TEST(Confidence, RejectsNonPositiveAlpha) {
  casa::SaliencyMap m(Eigen::VectorXd::Zero(1), 1);
  EXPECT_THROW(casa::confidence(m, 0.0, false, 1e-8), casa::ParameterError);
  EXPECT_THROW(casa::confidence(m, -1.0, false, 1e-8), casa::ParameterError);
}

TEST(SaliencyMap, RejectsWrongLength) {
  EXPECT_THROW(casa::SaliencyMap(Eigen::VectorXd::Zero(5), 2), casa::ShapeError);
  EXPECT_THROW(casa::SaliencyMap(Eigen::VectorXd::Constant(1, INFINITY), 1), casa::DataError);
}

}  // namespace
