#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "unle/energy.hpp"
#include "unle/errors.hpp"
#include "unle/samplers.hpp"
#include "unle/tasks.hpp"

using namespace unle;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

Target normal_target(Index d, double var = 1.0) {
  return Target(d, [var](const MatrixXd& x, VectorXd& logp, MatrixXd* grad) {
    logp = -0.5 * x.colwise().squaredNorm().transpose() / var;
    if (grad) *grad = -x / var;
  });
}

Target flat_box_target(Index d) {
  return Target(
      d,
      [](const MatrixXd& x, VectorXd& logp, MatrixXd* grad) {
        logp = VectorXd::Zero(x.cols());
        if (grad) *grad = MatrixXd::Zero(x.rows(), x.cols());
      },
      Support::box(VectorXd::Constant(d, -1.0), VectorXd::Constant(d, 1.0)));
}

// Batch-means standard error of the mean of a correlated series.
double batch_se(const std::vector<double>& v, int batches = 50) {
  const std::size_t len = v.size() / static_cast<std::size_t>(batches);
  std::vector<double> means;
  for (int b = 0; b < batches; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < len; ++i) s += v[static_cast<std::size_t>(b) * len + i];
    means.push_back(s / static_cast<double>(len));
  }
  double m = 0.0;
  for (double x : means) m += x;
  m /= batches;
  double var = 0.0;
  for (double x : means) var += (x - m) * (x - m);
  var /= batches - 1;
  return std::sqrt(var / batches);
}

}  // namespace

TEST(Mala, VanishingStepAlwaysAccepts) {
  const Target t = normal_target(1);
  ChainState s;
  s.position = VectorXd::Constant(1, 0.3);
  s.step_size = 1e-6;
  RandomStream rng(1);
  for (int i = 0; i < 10000; ++i) mala_step(t, s, rng);
  EXPECT_GE(static_cast<double>(s.accepted) / static_cast<double>(s.proposed), 0.999);
}

TEST(Mala, AdaptedChainNormalMoments) {
  const Target t = normal_target(1);
  ChainState s;
  s.position = VectorXd::Zero(1);
  s.step_size = 0.1;
  RandomStream rng(2);
  for (int w = 0; w < 500; ++w) {
    for (int i = 0; i < 10; ++i) mala_step(t, s, rng);
    adapt_step(s);
  }
  s.frozen = true;
  s.accepted = s.proposed = 0;
  std::vector<double> xs;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    mala_step(t, s, rng);
    xs.push_back(s.position[0]);
  }
  double m = 0.0, m2 = 0.0;
  for (double x : xs) {
    m += x;
    m2 += x * x;
  }
  m /= n;
  const double var = m2 / n - m * m;
  EXPECT_LT(std::abs(m), 3 * batch_se(xs));
  EXPECT_NEAR(var, 1.0, 0.05);
  const double rate = static_cast<double>(s.accepted) / static_cast<double>(s.proposed);
  EXPECT_GE(rate, 0.4);
  EXPECT_LE(rate, 0.6);
}

TEST(Mala, FlatTargetOnBoxIsUniform) {
  const Target t = flat_box_target(1);
  MalaEnsemble ens(t, MatrixXd::Zero(1, 2000), VectorXd::Constant(2000, 0.5), RandomStream(3));
  ens.run(200, true);
  ens.run(100, false);
  const Eigen::ArrayXd x = ens.positions().row(0).transpose().array();
  EXPECT_TRUE((x.abs() <= 1.0).all());
  EXPECT_NEAR(x.mean(), 0.0, 3 * std::sqrt(1.0 / 3.0 / 2000));
  EXPECT_NEAR((x - x.mean()).square().mean(), 1.0 / 3.0, 0.03);
}

TEST(Mala, RejectsNonPositiveStep) {
  const Target t = normal_target(1);
  ChainState s;
  s.position = VectorXd::Zero(1);
  s.step_size = 0.0;
  RandomStream rng(0);
  EXPECT_THROW(mala_step(t, s, rng), std::invalid_argument);
}

TEST(AdaptStep, FixedPointAndMonotone) {
  ChainState s;
  s.step_size = 0.3;
  s.window_accepted = 5;
  s.window_proposed = 10;
  adapt_step(s);
  EXPECT_DOUBLE_EQ(s.step_size, 0.3);
  EXPECT_EQ(s.window_proposed, 0);
  double prev = s.step_size;
  for (int i = 0; i < 5; ++i) {
    s.window_accepted = s.window_proposed = 4;
    adapt_step(s);
    EXPECT_GT(s.step_size, prev);
    prev = s.step_size;
  }
  s.frozen = true;
  EXPECT_THROW(adapt_step(s), std::invalid_argument);
}

TEST(RunChains, PooledCovarianceOfStandardNormal) {
  const Target t = normal_target(2);
  RandomStream rng(4);
  MatrixXd init(2, 1000);
  for (Index c = 0; c < 1000; ++c) init.col(c) = 3.0 * rng.normal_vector(2);
  SamplerDiagnostics diag;
  const ParticleCloud out = run_chains(t, ParticleCloud(init), 200, 200, RandomStream(5), &diag);
  const MatrixXd centered = out.particles.colwise() - out.particles.rowwise().mean();
  const MatrixXd cov = centered * centered.transpose() / 999.0;
  EXPECT_LT((cov - MatrixXd::Identity(2, 2)).norm() / std::sqrt(2.0), 0.1);
  EXPECT_GT(diag.acceptance_rate, 0.3);
}

TEST(RunChains, ZeroStepsIsIdentity) {
  const Target t = normal_target(3);
  RandomStream rng(6);
  MatrixXd init(3, 10);
  for (Index c = 0; c < 10; ++c) init.col(c) = rng.normal_vector(3);
  const ParticleCloud out = run_chains(t, ParticleCloud(init), 0, 0, RandomStream(7));
  EXPECT_EQ(out.particles, init);
}

TEST(RunChains, Deterministic) {
  const Target t = normal_target(2);
  const ParticleCloud init(MatrixXd::Zero(2, 100));
  const ParticleCloud a = run_chains(t, init, 20, 20, RandomStream(8));
  const ParticleCloud b = run_chains(t, init, 20, 20, RandomStream(8));
  EXPECT_EQ(a.particles, b.particles);
  EXPECT_EQ(a.step_sizes, b.step_sizes);
}

TEST(RunChains, AllChainsInvalidFails) {
  const Target t(1, [](const MatrixXd& x, VectorXd& logp, MatrixXd* grad) {
    logp = VectorXd::Constant(x.cols(), -std::numeric_limits<double>::infinity());
    if (grad) *grad = MatrixXd::Zero(1, x.cols());
  });
  EXPECT_THROW(run_chains(t, ParticleCloud(MatrixXd::Zero(1, 4)), 1, 1, RandomStream(0)), Error);
}

TEST(Resampling, SystematicCountsAndEss) {
  VectorXd w(4);
  w << 0.1, 0.2, 0.3, 0.4;
  const auto idx = systematic_resample(w, 0.5);
  ASSERT_EQ(idx.size(), 4u);
  std::vector<int> counts(4, 0);
  for (auto i : idx) ++counts[static_cast<std::size_t>(i)];
  for (int k = 0; k < 4; ++k) {
    EXPECT_GE(counts[static_cast<std::size_t>(k)], static_cast<int>(std::floor(4 * w[k])));
    EXPECT_LE(counts[static_cast<std::size_t>(k)], static_cast<int>(std::ceil(4 * w[k])));
  }
  EXPECT_DOUBLE_EQ(effective_sample_size(VectorXd::Constant(10, 0.1)), 10.0);
  VectorXd v(3);
  v << 1000.0, 1000.0, -std::numeric_limits<double>::infinity();
  EXPECT_NEAR(log_sum_exp(v), 1000.0 + std::log(2.0), 1e-12);
}

TEST(ParticleCloud, Validate) {
  ParticleCloud c(MatrixXd::Zero(2, 3));
  EXPECT_NO_THROW(c.validate());
  c.weights[0] = 0.9;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Smc, IdenticalEndpointsGiveZeroRatio) {
  const Target t = normal_target(2);
  RandomStream rng(9);
  MatrixXd init(2, 500);
  for (Index c = 0; c < 500; ++c) init.col(c) = rng.normal_vector(2);
  const SmcResult r = smc_run(t, t, ParticleCloud(init), SmcConfig{}, RandomStream(10));
  EXPECT_EQ(r.log_normalizer_ratio, 0.0);
  EXPECT_EQ(r.diagnostics.resample_count, 0);
  for (double e : r.diagnostics.ess) EXPECT_NEAR(e, 500.0, 1e-9);
  EXPECT_NEAR(r.cloud.weights.sum(), 1.0, 1e-12);
}

TEST(Smc, GaussianNormalizerRatio) {
  // nu0 = Normal(0, 4 I) normalized; target exp(-|x|^2 / 2) has Z = 2 pi.
  const Target nu0(2, [](const MatrixXd& x, VectorXd& logp, MatrixXd* grad) {
    logp = (-0.125 * x.colwise().squaredNorm().transpose()).array() - std::log(8 * std::numbers::pi);
    if (grad) *grad = -0.25 * x;
  });
  const Target target = normal_target(2);
  RandomStream rng(11);
  MatrixXd init(2, 5000);
  for (Index c = 0; c < 5000; ++c) init.col(c) = 2.0 * rng.normal_vector(2);
  SmcConfig cfg;
  cfg.L = 20;
  cfg.kernel_steps = 3;
  const SmcResult r = smc_run(target, nu0, ParticleCloud(init), cfg, RandomStream(12));
  EXPECT_NEAR(r.log_normalizer_ratio, std::log(2 * std::numbers::pi), 0.05);
  EXPECT_NEAR(r.cloud.weights.sum(), 1.0, 1e-12);
}

TEST(Smc, ResampledWeightsAreUniform) {
  const Target nu0 = normal_target(1, 100.0);
  const Target target = normal_target(1, 0.01);
  RandomStream rng(13);
  MatrixXd init(1, 300);
  for (Index c = 0; c < 300; ++c) init.col(c) = 10.0 * rng.normal_vector(1);
  SmcConfig cfg;
  cfg.L = 3;
  cfg.kernel_steps = 0;
  const SmcResult r = smc_run(target, nu0, ParticleCloud(init), cfg, RandomStream(14));
  EXPECT_GT(r.diagnostics.resample_count, 0);
}

TEST(Smc, RejectsBadConfig) {
  const Target t = normal_target(1);
  SmcConfig cfg;
  cfg.L = 0;
  EXPECT_THROW(smc_run(t, t, ParticleCloud(MatrixXd::Zero(1, 4)), cfg, RandomStream(0)),
               std::invalid_argument);
}

TEST(Exchange, ThetaFreeEnergySamplesThePrior) {
  // E(x) = x^2 / 2 with no theta dependence.
  const QuadraticEnergy e(MatrixXd::Identity(1, 1), MatrixXd::Zero(1, 1), MatrixXd::Zero(1, 1));
  const DiagonalNormalPrior prior(VectorXd::Constant(1, 1.0), VectorXd::Constant(1, 2.0));
  const Index chains = 1000;
  ExchangeChains ex(MatrixXd::Zero(1, chains), VectorXd::Zero(1), VectorXd::Constant(1, 2.0));
  const RandomStream rng(15);
  std::uint64_t sweep = 0;
  for (int i = 0; i < 50; ++i) exchange_sweep(e, prior, VectorXd::Zero(1), ex, 2, rng.child(sweep++), true);
  double s = 0.0, s2 = 0.0;
  long n = 0;
  for (int i = 0; i < 100; ++i) {
    exchange_sweep(e, prior, VectorXd::Zero(1), ex, 2, rng.child(sweep++), false);
    for (Index c = 0; c < chains; ++c) {
      s += ex.theta(0, c);
      s2 += ex.theta(0, c) * ex.theta(0, c);
      ++n;
    }
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  EXPECT_NEAR(mean, 1.0, 0.1);
  EXPECT_NEAR(var, 4.0, 0.3);
}

TEST(Exchange, OutOfSupportProposalIsRejectedWithoutInnerWork) {
  const QuadraticEnergy e(MatrixXd::Identity(1, 1), MatrixXd::Identity(1, 1), MatrixXd::Zero(1, 1));
  const BoxUniformPrior prior(VectorXd::Constant(1, 0.0), VectorXd::Constant(1, 1e-9));
  ExchangeChains ex(MatrixXd::Constant(1, 5, 5e-10), VectorXd::Zero(1), VectorXd::Constant(1, 10.0));
  const MatrixXd aux_before = ex.aux;
  exchange_sweep(e, prior, VectorXd::Zero(1), ex, 3, RandomStream(16));
  EXPECT_EQ(ex.aux, aux_before);
  for (Index c = 0; c < 5; ++c) EXPECT_EQ(ex.proposed[static_cast<std::size_t>(c)], 1);
  EXPECT_EQ(ex.acceptance_rate(), 0.0);
  EXPECT_THROW(exchange_sweep(e, prior, VectorXd::Zero(1), ex, 0, RandomStream(16)), std::invalid_argument);
}

TEST(Exchange, SingleChainStep) {
  const QuadraticEnergy e(MatrixXd::Identity(1, 1), MatrixXd::Identity(1, 1), MatrixXd::Zero(1, 1));
  const DiagonalNormalPrior prior(VectorXd::Zero(1), VectorXd::Ones(1));
  ExchangeChains one(MatrixXd::Zero(1, 1), VectorXd::Ones(1), VectorXd::Constant(1, 1.0));
  const VectorXd next = exchange_step(e, prior, VectorXd::Ones(1), one, 5, RandomStream(17));
  EXPECT_EQ(next.size(), 1);
  ExchangeChains two(MatrixXd::Zero(1, 2), VectorXd::Ones(1), VectorXd::Constant(1, 1.0));
  EXPECT_THROW(exchange_step(e, prior, VectorXd::Ones(1), two, 5, RandomStream(17)), std::invalid_argument);
}
