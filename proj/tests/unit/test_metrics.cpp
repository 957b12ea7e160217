#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "unle/metrics.hpp"

using namespace unle;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd normal_columns(Index rows, Index cols, double shift, std::uint64_t seed) {
  RandomStream rng(seed);
  MatrixXd m(rows, cols);
  for (Index c = 0; c < cols; ++c) m.col(c) = rng.normal_vector(rows).array() + shift;
  return m;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// E|Z| for Z ~ Normal(mu, s^2).
double folded_normal_mean(double mu, double s) {
  return s * std::sqrt(2.0 / std::numbers::pi) * std::exp(-mu * mu / (2 * s * s)) +
         mu * (1 - 2 * normal_cdf(-mu / s));
}

// Brute-force V-statistic, for comparison with the unequal-size U-statistic.
double energy_distance_naive(const MatrixXd& a, const MatrixXd& b) {
  auto mean_dist = [](const MatrixXd& p, const MatrixXd& q, bool skip_diag) {
    double s = 0.0;
    long n = 0;
    for (Index i = 0; i < p.cols(); ++i)
      for (Index j = 0; j < q.cols(); ++j) {
        if (skip_diag && i == j) continue;
        s += (p.col(i) - q.col(j)).norm();
        ++n;
      }
    return s / static_cast<double>(n);
  };
  return 2 * mean_dist(a, b, false) - mean_dist(a, a, true) - mean_dist(b, b, true);
}

}  // namespace

TEST(EnergyDistance, IdenticalSamplesGiveZero) {
  const MatrixXd a = normal_columns(3, 200, 0.0, 1);
  EXPECT_EQ(energy_distance(a, a).value, 0.0);
}

TEST(EnergyDistance, SymmetricAndOrderInvariant) {
  const MatrixXd a = normal_columns(2, 300, 0.0, 2), b = normal_columns(2, 300, 0.5, 3);
  const double ab = energy_distance(a, b).value;
  EXPECT_NEAR(energy_distance(b, a).value, ab, 1e-12);
  const MatrixXd a_rev = a.rowwise().reverse();
  EXPECT_NEAR(energy_distance(a_rev, b).value, ab, 1e-12);
}

TEST(EnergyDistance, UnequalSizesMatchBruteForce) {
  const MatrixXd a = normal_columns(2, 120, 0.0, 4), b = normal_columns(2, 90, 0.3, 5);
  EXPECT_NEAR(energy_distance(a, b).value, energy_distance_naive(a, b), 1e-10);
}

TEST(EnergyDistance, GaussianShiftClosedForm) {
  // 1-D Normal(0,1) vs Normal(mu,1): 2 E|X - Y| - E|X - X'| - E|Y - Y'|.
  const double mu = 1.0;
  const double truth = 2 * folded_normal_mean(mu, std::numbers::sqrt2) - 2 * 2 / std::sqrt(std::numbers::pi);
  const MatrixXd a = normal_columns(1, 3000, 0.0, 6), b = normal_columns(1, 2500, mu, 7);
  const MetricReport r = energy_distance(a, b);
  EXPECT_GT(r.standard_error, 0.0);
  EXPECT_NEAR(r.value, truth, 4 * r.standard_error);
  EXPECT_EQ(r.n_a, 3000);
  EXPECT_EQ(r.n_b, 2500);
}

TEST(EnergyDistance, NullQuantileBoundsSameDistribution) {
  const MatrixXd a = normal_columns(2, 200, 0.0, 8), b = normal_columns(2, 200, 0.0, 9);
  const double q = energy_distance_null_quantile(a, b, 200, 0.99, RandomStream(10));
  EXPECT_GT(q, 0.0);
  EXPECT_LT(energy_distance(a, b).value, q);
  const MatrixXd far = normal_columns(2, 200, 1.0, 11);
  EXPECT_GT(energy_distance(a, far).value, energy_distance_null_quantile(a, far, 200, 0.99, RandomStream(12)));
}

TEST(EnergyDistance, RejectsBadInput) {
  EXPECT_THROW(energy_distance(MatrixXd::Zero(2, 5), MatrixXd::Zero(3, 5)), std::invalid_argument);
  EXPECT_THROW(energy_distance(MatrixXd::Zero(2, 1), MatrixXd::Zero(2, 5)), std::invalid_argument);
}

TEST(C2st, SameDistributionIsNearHalf) {
  const MatrixXd a = normal_columns(2, 1000, 0.0, 13), b = normal_columns(2, 1000, 0.0, 14);
  const MetricReport r = c2st(a, b, RandomStream(15));
  EXPECT_EQ(r.folds.size(), 5u);
  EXPECT_NEAR(r.value, 0.5, 0.05);
}

TEST(C2st, SeparatedDistributionsAreNearOne) {
  const MatrixXd a = normal_columns(2, 500, 0.0, 16), b = normal_columns(2, 500, 10.0, 17);
  EXPECT_GT(c2st(a, b, RandomStream(18)).value, 0.99);
}

TEST(C2st, ShiftedGaussiansMatchBayesAccuracy) {
  // Bayes-optimal accuracy for Normal(0,1) vs Normal(1,1) in 1-D is Phi(1/2).
  const MatrixXd a = normal_columns(1, 2000, 0.0, 19), b = normal_columns(1, 2000, 1.0, 20);
  EXPECT_NEAR(c2st(a, b, RandomStream(21)).value, normal_cdf(0.5), 0.03);
}

TEST(C2st, Deterministic) {
  const MatrixXd a = normal_columns(2, 200, 0.0, 22), b = normal_columns(2, 200, 0.5, 23);
  EXPECT_EQ(c2st(a, b, RandomStream(24)).value, c2st(a, b, RandomStream(24)).value);
}

TEST(C2st, RejectsBadInput) {
  EXPECT_THROW(c2st(MatrixXd::Zero(2, 10), MatrixXd::Zero(3, 10), RandomStream(0)), std::invalid_argument);
  MatrixXd bad = MatrixXd::Zero(1, 50);
  bad(0, 3) = std::nan("");
  EXPECT_THROW(c2st(bad, MatrixXd::Zero(1, 50), RandomStream(0)), std::invalid_argument);
}

TEST(Grid, CentersAndProbabilities) {
  Grid2D g;
  g.nx = 4;
  g.ny = 2;
  const MatrixXd c = g.centers();
  ASSERT_EQ(c.cols(), 8);
  EXPECT_NEAR(c(0, 0), -0.75, 1e-14);
  EXPECT_NEAR(c(0, 1), -0.25, 1e-14);
  EXPECT_NEAR(c(1, 0), -0.5, 1e-14);
  EXPECT_NEAR(c(1, 4), 0.5, 1e-14);
  const VectorXd p = grid_probabilities([](const MatrixXd& x) { return VectorXd::Zero(x.cols()); }, g);
  EXPECT_NEAR(p.sum(), 1.0, 1e-14);
  EXPECT_NEAR(p[0], 0.125, 1e-14);
}

TEST(Grid, TotalVariation) {
  VectorXd p(3), q(3);
  p << 0.5, 0.5, 0.0;
  q << 0.0, 0.5, 0.5;
  EXPECT_NEAR(total_variation(p, q), 0.5, 1e-15);
  EXPECT_EQ(total_variation(p, p), 0.0);
}

TEST(Grid, KdeOfGaussianApproachesDensity) {
  Grid2D g;
  g.x_lo = g.y_lo = -4.0;
  g.x_hi = g.y_hi = 4.0;
  g.nx = g.ny = 40;
  const VectorXd truth =
      grid_probabilities([](const MatrixXd& x) -> VectorXd { return -0.5 * x.colwise().squaredNorm().transpose(); }, g);
  const VectorXd kde = kde_grid(normal_columns(2, 20000, 0.0, 25), g, 0.15);
  EXPECT_NEAR(kde.sum(), 1.0, 1e-12);
  EXPECT_LT(total_variation(kde, truth), 0.05);
  const VectorXd smoothed = smooth_grid(truth, g, 0.15);
  EXPECT_NEAR(smoothed.sum(), 1.0, 1e-12);
  EXPECT_LT(total_variation(smoothed, truth), 0.03);
}
