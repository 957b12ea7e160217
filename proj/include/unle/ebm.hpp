#pragma once

#include <functional>
#include <iosfwd>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "unle/energy.hpp"
#include "unle/nn.hpp"
#include "unle/samplers.hpp"
#include "unle/tasks.hpp"

namespace unle {

enum class TrainMode { mcmc, smc };
std::string_view to_string(TrainMode m);
TrainMode train_mode_from_string(std::string_view s);

struct TrainConfig {
  int max_iter = 500;
  double learning_rate = 0.01;
  /// Size of the persistent cloud in joint training.
  int particles = 1000;
  /// MALA steps per iteration (mcmc mode, and every conditional refresh).
  int mcmc_steps = 50;
  /// Adaptive MALA steps at the start of every refresh, before the frozen
  /// mcmc_steps that produce the particle approximation.
  int warmup_steps = 50;
  /// Conditional training batch; min(N, batch_size) is used.
  int batch_size = 1000;
  TrainMode mode = TrainMode::mcmc;
  SmcConfig smc{};
  double init_step_size = 0.1;

  void validate() const;
  nlohmann::json to_json() const;
};

struct TrainLogRow {
  int iter = 0;
  double data_term_norm = 0.0;
  double model_term_norm = 0.0;
  double mean_acceptance = 0.0;
  double ess = 0.0;  // NaN outside smc mode
};

void write_train_log_csv(std::ostream& out, const std::vector<TrainLogRow>& log);

/// log pi(theta) - E(x, theta), without -log Z_pi.
double joint_tilted_logpdf(const ConditionalEnergy& e, const Prior& prior, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& theta);
/// -E(x, theta), without -log Z(theta).
double likelihood_logpdf(const ConditionalEnergy& e, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& theta);

/// Sampling target on stacked [x; theta] for the tilted joint model. The
/// energy and prior must outlive the target.
Target joint_target(const ConditionalEnergy& e, const Prior& prior);

/// Persistent state of joint training.
struct JointTrainState {
  ParticleCloud cloud;  // over [x; theta]
  nn::AdamState adam;
  int iterations_done = 0;
  bool warmed_up = false;
};

struct JointTrainResult {
  std::vector<TrainLogRow> log;
  SamplerDiagnostics last_sampler;
};

/// Maximum-likelihood training of the tilted joint model on `data`, updating
/// `energy` in place. `state` carries the cloud and Adam moments between
/// calls; an empty state is initialized from the data.
/// Throws Error(training_failure) if the cloud collapses.
JointTrainResult maximize_ebm_log_l(const Dataset& data, ConditionalEnergy& energy,
                                    const Prior& prior, const TrainConfig& cfg,
                                    const RandomStream& rng, JointTrainState& state);

/// Per-datapoint persistent particles for conditional training. Slot i
/// belongs to data point i.
struct ConditionalTrainState {
  Eigen::MatrixXd slots;  // x_dim x N
  Eigen::VectorXd step_sizes;
  nn::AdamState adam;
  int iterations_done = 0;
  bool adam_ready = false;

  /// Adds slots (initialized at the data x) for data points beyond the
  /// current slot count.
  void extend(const Dataset& data, double init_step_size);
};

/// Called after each conditional iteration with the batch parameters and the
/// refreshed particles of that batch (theta_dim x B, x_dim x B).
using ConditionalHook = std::function<void(int iter, const Eigen::MatrixXd& thetas,
                                           const Eigen::MatrixXd& particles)>;

struct ConditionalTrainResult {
  std::vector<TrainLogRow> log;
};

/// Maximizes the average conditional log-likelihood (1/N) sum_i log q(x_i | theta_i).
/// Only the x-part of the slots ever moves. Warm-starts from `state`.
ConditionalTrainResult maximize_cebm_log_l(const Dataset& data, ConditionalEnergy& energy,
                                           const TrainConfig& cfg, const RandomStream& rng,
                                           ConditionalTrainState& state,
                                           const ConditionalHook& hook = {});

}  // namespace unle
