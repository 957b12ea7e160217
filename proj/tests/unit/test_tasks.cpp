#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "unle/errors.hpp"
#include "unle/tasks.hpp"

using namespace unle;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }
double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2 * std::numbers::pi); }

// Mean of Normal(mu, sd^2) truncated to [lo, hi].
double truncated_mean(double mu, double sd, double lo, double hi) {
  const double a = (lo - mu) / sd, b = (hi - mu) / sd;
  return mu + sd * (normal_pdf(a) - normal_pdf(b)) / (normal_cdf(b) - normal_cdf(a));
}

// Bivariate normal with the SLCP parameterization, written out by hand.
double slcp_pair_logpdf(double x1, double x2, const VectorXd& t) {
  const double s1 = t[2] * t[2], s2 = t[3] * t[3], rho = std::tanh(t[4]);
  const double z1 = (x1 - t[0]) / s1, z2 = (x2 - t[1]) / s2;
  const double q = (z1 * z1 - 2 * rho * z1 * z2 + z2 * z2) / (1 - rho * rho);
  return -0.5 * q - std::log(2 * std::numbers::pi * s1 * s2 * std::sqrt(1 - rho * rho));
}

}  // namespace

TEST(Tasks, Registry) {
  for (const auto& name : task_names()) {
    const auto t = make_task(name);
    EXPECT_EQ(t->name(), name);
    EXPECT_EQ(t->prior().dim(), t->theta_dim());
  }
  EXPECT_THROW(make_task("no_such_task"), std::invalid_argument);
}

TEST(Tasks, BoxPriorDensities) {
  const auto tm = make_task("two_moons");
  EXPECT_NEAR(tm->prior().log_density(VectorXd::Zero(2)), -std::log(4.0), 1e-14);
  EXPECT_EQ(tm->prior().log_density(VectorXd::Constant(2, 1.5)), -std::numeric_limits<double>::infinity());
  const auto glu = make_task("gaussian_linear_uniform");
  EXPECT_NEAR(glu->prior().log_density(VectorXd::Constant(10, 0.3)), -10 * std::log(2.0), 1e-12);
}

TEST(Tasks, SimulatorDimensionsAndSupport) {
  RandomStream rng(1);
  for (const auto& name : task_names()) {
    const auto t = make_task(name);
    const VectorXd theta = t->true_theta(0);
    const auto x = t->simulate(theta, rng);
    ASSERT_TRUE(x.has_value()) << name;
    EXPECT_EQ(x->size(), t->x_dim()) << name;
  }
  const auto slcp = make_task("slcp");
  EXPECT_EQ(slcp->x_dim(), 8);
  EXPECT_THROW(slcp->simulate(VectorXd::Constant(5, 4.0), rng), std::invalid_argument);
  EXPECT_THROW(slcp->simulate(VectorXd::Zero(3), rng), std::invalid_argument);
}

TEST(Tasks, GaussianLinearUniformNoiseMean) {
  const auto t = make_task("gaussian_linear_uniform");
  RandomStream rng(2);
  const int n = 100000;
  VectorXd sum = VectorXd::Zero(10);
  for (int i = 0; i < n; ++i) sum += *t->simulate(VectorXd::Zero(10), rng);
  const VectorXd mean = sum / n;
  EXPECT_LT(mean.cwiseAbs().maxCoeff(), 3 * 0.1 / std::sqrt(static_cast<double>(n)));
}

TEST(Tasks, TwoMoonsMeanRadius) {
  const auto t = make_task("two_moons");
  RandomStream rng(3);
  const int n = 100000;
  double r = 0.0;
  for (int i = 0; i < n; ++i) {
    const VectorXd x = *t->simulate(VectorXd::Zero(2), rng);
    r += std::hypot(x[0] - 0.25, x[1]);
  }
  EXPECT_NEAR(r / n, 0.1, 3 * 0.01 / std::sqrt(static_cast<double>(n)) + 1e-4);
}

TEST(Tasks, GaussianLinearUniformLoglikClosedForm) {
  const auto t = make_task("gaussian_linear_uniform");
  RandomStream rng(4);
  const VectorXd theta = t->prior().sample(rng), x = rng.normal_vector(10);
  const double expected =
      -0.5 * (x - theta).squaredNorm() / 0.01 - 10 * std::log(0.1) - 5 * std::log(2 * std::numbers::pi);
  EXPECT_NEAR(t->true_loglik(x, theta), expected, 1e-9);
  EXPECT_LT((t->true_loglik_grad(x, theta) - (x - theta) / 0.01).norm(), 1e-9);
}

TEST(Tasks, SlcpLoglikMatchesPairFormulaAndIntegrates) {
  const auto t = make_task("slcp");
  VectorXd theta(5);
  theta << 0.5, -1.0, 1.1, -0.9, 0.7;
  RandomStream rng(5);
  const VectorXd x = *t->simulate(theta, rng);
  double expected = 0.0;
  for (int k = 0; k < 4; ++k) expected += slcp_pair_logpdf(x[2 * k], x[2 * k + 1], theta);
  EXPECT_NEAR(t->true_loglik(x, theta), expected, 1e-9);

  // Vary the first pair on a grid; the other three contribute a fixed factor.
  const double rest = expected - slcp_pair_logpdf(x[0], x[1], theta);
  const int g = 400;
  const double lo1 = theta[0] - 8 * 1.21, lo2 = theta[1] - 8 * 0.81;
  const double h1 = 16 * 1.21 / g, h2 = 16 * 0.81 / g;
  double mass = 0.0;
  VectorXd y = x;
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < g; ++j) {
      y[0] = lo1 + (i + 0.5) * h1;
      y[1] = lo2 + (j + 0.5) * h2;
      mass += std::exp(t->true_loglik(y, theta) - rest) * h1 * h2;
    }
  EXPECT_NEAR(mass, 1.0, 1e-3);
}

TEST(Tasks, BimodalLikelihoodIntegratesToOne) {
  const auto t = make_task("bimodal");
  VectorXd theta(1);
  theta << 0.4;
  const int g = 20000;
  double mass = 0.0;
  VectorXd x(1);
  for (int i = 0; i < g; ++i) {
    x[0] = -10.0 + 20.0 * (i + 0.5) / g;
    mass += std::exp(t->true_loglik(x, theta)) * 20.0 / g;
  }
  EXPECT_NEAR(mass, 1.0, 1e-6);
}

TEST(Tasks, ObservationsAreFixed) {
  const auto a = make_task("slcp"), b = make_task("slcp");
  EXPECT_EQ(a->observation(3), b->observation(3));
  EXPECT_NE(a->observation(3), a->observation(4));
  EXPECT_THROW(a->true_theta(-1), std::invalid_argument);
}

TEST(Tasks, LotkaVolterraLoglikIsFiniteAtTruth) {
  const auto t = make_task("lotka_volterra");
  const VectorXd theta = t->true_theta(0);
  const VectorXd x = t->observation(0);
  EXPECT_TRUE((x.array() > 0).all());
  EXPECT_TRUE(std::isfinite(t->true_loglik(x, theta)));
}

TEST(Dataset, RejectsBadEntries) {
  Dataset d(1, 1);
  d.add(VectorXd::Zero(1), VectorXd::Zero(1), 1);
  EXPECT_THROW(d.add(VectorXd::Zero(1), VectorXd::Zero(1), 0), std::invalid_argument);
  EXPECT_THROW(d.add(VectorXd::Constant(1, std::nan("")), VectorXd::Zero(1), 1), std::invalid_argument);
  EXPECT_THROW(d.add(VectorXd::Zero(2), VectorXd::Zero(1), 1), std::invalid_argument);
}

TEST(Dataset, CsvRoundTrip) {
  const auto t = make_task("slcp");
  RandomStream rng(6);
  MatrixXd thetas(5, 20);
  for (int c = 0; c < 20; ++c) thetas.col(c) = t->prior().sample(rng);
  Dataset d = simulate_batch(*t, thetas, 0, rng.child(1)).data;
  d.append(simulate_batch(*t, thetas.leftCols(5), 1, rng.child(2)).data);
  std::ostringstream out;
  write_dataset_csv(out, d);
  std::istringstream in(out.str());
  const Dataset back = read_dataset_csv(in);
  ASSERT_EQ(back.size(), d.size());
  EXPECT_EQ(back.rounds, d.rounds);
  EXPECT_EQ(back.theta_matrix(), d.theta_matrix());
  EXPECT_EQ(back.x_matrix(), d.x_matrix());
  EXPECT_EQ(out.str().substr(0, out.str().find('\r')),
            "round,theta_0,theta_1,theta_2,theta_3,theta_4,x_0,x_1,x_2,x_3,x_4,x_5,x_6,x_7");
}

TEST(Dataset, CsvRejectsNonNumeric) {
  std::istringstream in("round,theta_0,x_0\r\n0,abc,1\r\n");
  EXPECT_THROW(read_dataset_csv(in), Error);
}

TEST(Dataset, JointMatrixLayout) {
  Dataset d(2, 1);
  d.add((VectorXd(2) << 1, 2).finished(), (VectorXd(1) << 9).finished(), 0);
  const MatrixXd j = d.joint_matrix();
  EXPECT_EQ(j(0, 0), 9);
  EXPECT_EQ(j(1, 0), 1);
  EXPECT_EQ(j(2, 0), 2);
}

TEST(Simulation, BatchIsDeterministic) {
  const auto t = make_task("two_moons");
  MatrixXd thetas = MatrixXd::Zero(2, 50);
  const auto a = simulate_batch(*t, thetas, 0, RandomStream(7));
  const auto b = simulate_batch(*t, thetas, 0, RandomStream(7));
  EXPECT_EQ(a.data.x_matrix(), b.data.x_matrix());
  EXPECT_EQ(a.attempts, 50u);
  EXPECT_EQ(a.invalid, 0u);
}

TEST(SamplesCsv, RoundTrip) {
  RandomStream rng(8);
  MatrixXd s(3, 7);
  for (int c = 0; c < 7; ++c) s.col(c) = rng.normal_vector(3);
  std::ostringstream out;
  write_samples_csv(out, s);
  std::istringstream in(out.str());
  EXPECT_EQ(read_samples_csv(in), s);
}

TEST(Reference, GaussianLinearUniformTruncatedMean) {
  const auto t = make_task("gaussian_linear_uniform");
  const VectorXd x_o = t->observation(0);
  ReferenceConfig cfg;
  // Coordinates near the box edge mix slowly in logit space.
  cfg.chains = 500;
  cfg.warmup = 2000;
  cfg.thin = 50;
  cfg.candidates = 10000;
  ReferenceDiagnostics diag;
  const int n = 2000;
  const MatrixXd s = reference_posterior(*t, x_o, n, RandomStream(9), cfg, &diag);
  ASSERT_EQ(s.cols(), n);
  for (int i = 0; i < 10; ++i) {
    const double truth = truncated_mean(x_o[i], 0.1, -1.0, 1.0);
    const Eigen::ArrayXd row = s.row(i).transpose().array();
    const double se = std::sqrt((row - row.mean()).square().sum() / (n - 1) / n);
    EXPECT_NEAR(row.mean(), truth, 4 * se) << "coordinate " << i;
  }
  EXPECT_GT(diag.acceptance_rate, 0.3);
}

TEST(Reference, TwoMoonsModesBalanced) {
  const auto t = make_task("two_moons");
  ReferenceConfig cfg;
  cfg.chains = 1000;
  cfg.warmup = 500;
  cfg.thin = 10;
  const MatrixXd s = reference_posterior(*t, t->observation(0), 2000, RandomStream(10), cfg);
  const double frac = ((s.row(0) + s.row(1)).array() > 0).cast<double>().mean();
  EXPECT_GE(frac, 0.45);
  EXPECT_LE(frac, 0.55);
}

TEST(Reference, ZeroDraws) {
  const auto t = make_task("two_moons");
  EXPECT_EQ(reference_posterior(*t, t->observation(0), 0, RandomStream(11)).cols(), 0);
}
