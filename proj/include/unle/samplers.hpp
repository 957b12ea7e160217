#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "unle/energy.hpp"
#include "unle/rng.hpp"
#include "unle/support.hpp"
#include "unle/tasks.hpp"

namespace unle {

/// Unnormalized log-density. `evaluate` receives one point per column and
/// fills log p (may be -inf) and, when `grad` is non-null, grad_x log p.
/// Bounded coordinates of `support` are sampled through the logit transform.
struct Target {
  using Evaluate =
      std::function<void(const Eigen::MatrixXd& points, Eigen::VectorXd& logp, Eigen::MatrixXd* grad)>;

  Eigen::Index dim = 0;
  Evaluate evaluate;
  Support support;

  Target() = default;
  Target(Eigen::Index dim, Evaluate evaluate);
  Target(Eigen::Index dim, Evaluate evaluate, Support support);

  double log_density(const Eigen::VectorXd& x) const;
  Eigen::VectorXd grad_log_density(const Eigen::VectorXd& x) const;
};

struct ChainState {
  Eigen::VectorXd position;
  double step_size = 0.1;
  long accepted = 0;
  long proposed = 0;
  long window_accepted = 0;
  long window_proposed = 0;
  bool frozen = false;
};

struct ParticleCloud {
  Eigen::MatrixXd particles;  // dim x N
  Eigen::VectorXd weights;    // N, sums to one
  Eigen::VectorXd step_sizes; // N

  ParticleCloud() = default;
  /// Uniform weights, constant step size.
  explicit ParticleCloud(Eigen::MatrixXd particles, double step_size = 0.1);

  Eigen::Index dim() const { return particles.rows(); }
  Eigen::Index size() const { return particles.cols(); }
  /// Throws std::invalid_argument when an invariant is broken.
  void validate() const;
};

/// One MALA move, in the unconstrained coordinates of target.support.
/// Proposals with non-finite density are rejected and counted.
void mala_step(const Target& target, ChainState& s, RandomStream& rng);

/// sigma <- sigma * exp(0.05 * (window rate - target_rate)); resets the window.
void adapt_step(ChainState& s, double target_rate = 0.5);

inline constexpr double kAdaptGain = 0.05;

/// N chains moved in lock step so that every density evaluation is one batch.
/// Chain c draws from its own stream rng.child(c).
class MalaEnsemble {
 public:
  MalaEnsemble(const Target& target, const Eigen::MatrixXd& positions,
               const Eigen::VectorXd& step_sizes, const RandomStream& rng);

  /// One move of every chain; adaptation with a one-step window when `adapt`.
  void step(bool adapt, double target_rate = 0.5);
  void run(int steps, bool adapt, double target_rate = 0.5);

  Eigen::Index size() const { return x_.cols(); }
  const Eigen::MatrixXd& positions() const { return x_; }
  const Eigen::VectorXd& step_sizes() const { return sigma_; }
  /// log p at the current (constrained) positions, without the Jacobian.
  const Eigen::VectorXd& log_density() const { return logp_; }
  double acceptance_rate() const;
  long proposals() const;
  void reset_counters();
  /// Chains whose starting density was not finite and that were restarted
  /// from a chain with finite density.
  int restarts() const { return restarts_; }

 private:
  void evaluate(const Eigen::MatrixXd& z, Eigen::MatrixXd& x, Eigen::VectorXd& logp_x,
                Eigen::VectorXd& logp_z, Eigen::MatrixXd& grad_z) const;

  const Target& target_;
  std::vector<RandomStream> streams_;
  Eigen::MatrixXd x_, z_, grad_z_;
  Eigen::VectorXd logp_, logp_z_, sigma_;
  std::vector<long> accepted_, proposed_;
  int restarts_ = 0;
};

struct SamplerDiagnostics {
  double acceptance_rate = 0.0;
  double step_size_min = 0.0;
  double step_size_mean = 0.0;
  double step_size_max = 0.0;
  std::vector<double> ess;  // SMC only: ESS after reweighting, per stage
  int resample_count = 0;
  int restarts = 0;
  nlohmann::json to_json() const;
};

/// Warmup steps with per-chain adaptation, then frozen step sizes for n_steps.
/// Throws Error(sampler_failure) when every chain ends with non-finite density.
ParticleCloud run_chains(const Target& target, const ParticleCloud& init, int n_steps,
                         int warmup_steps, const RandomStream& rng,
                         SamplerDiagnostics* diagnostics = nullptr);

/// Offspring indices of systematic resampling with offset u in [0, 1).
std::vector<Eigen::Index> systematic_resample(const Eigen::VectorXd& weights, double u);
double effective_sample_size(const Eigen::VectorXd& weights);
double log_sum_exp(const Eigen::VectorXd& v);

struct SmcConfig {
  int L = 20;
  int kernel_steps = 3;
  double resample_threshold = 0.5;
  bool adapt_kernel = true;
};

struct SmcResult {
  ParticleCloud cloud;
  /// Estimate of log(Z_target / Z_nu0).
  double log_normalizer_ratio = 0.0;
  SamplerDiagnostics diagnostics;
};

/// Resample-move SMC along nu_l ~ nu0^(1 - l/L) target^(l/L), starting from a
/// cloud that approximates nu0. Throws Error(degenerate_bridge) when all
/// weights vanish.
SmcResult smc_run(const Target& target, const Target& nu0, const ParticleCloud& cloud0,
                  const SmcConfig& cfg, const RandomStream& rng);

/// Exchange-algorithm chains for p(theta) exp(-E(x_o, theta)) / Z(theta).
struct ExchangeChains {
  Eigen::MatrixXd theta;           // theta_dim x C
  Eigen::MatrixXd aux;             // x_dim x C, persisted auxiliary draws
  Eigen::VectorXd aux_step;        // inner MALA step sizes
  Eigen::MatrixXd proposal_scale;  // theta_dim x C, random-walk scales
  std::vector<long> accepted;
  std::vector<long> proposed;

  ExchangeChains() = default;
  /// Auxiliary states start at x_o.
  ExchangeChains(const Eigen::MatrixXd& theta, const Eigen::VectorXd& x_o,
                 const Eigen::VectorXd& proposal_scale, double aux_step = 0.1);

  Eigen::Index size() const { return theta.cols(); }
  double acceptance_rate() const;
};

inline constexpr double kExchangeTargetRate = 0.234;
/// Inner chains start away from q(.|theta'); a higher rate keeps the MALA
/// drift contracting so they reach it within inner_steps.
inline constexpr double kExchangeInnerRate = 0.75;

/// One exchange update of every chain. Proposals outside the prior support
/// are rejected before any inner sampling. With `adapt`, proposal scales move
/// towards 0.234 acceptance and inner step sizes towards 0.75.
void exchange_sweep(const ConditionalEnergy& energy, const Prior& prior, const Eigen::VectorXd& x_o,
                    ExchangeChains& chains, int inner_steps, const RandomStream& rng,
                    bool adapt = false);

/// Single-chain form of exchange_sweep; returns the next theta.
Eigen::VectorXd exchange_step(const ConditionalEnergy& energy, const Prior& prior,
                              const Eigen::VectorXd& x_o, ExchangeChains& chain, int inner_steps,
                              const RandomStream& rng, bool adapt = false);

}  // namespace unle
