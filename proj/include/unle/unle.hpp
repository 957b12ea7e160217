#pragma once

#include <memory>
#include <optional>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "unle/ebm.hpp"
#include "unle/energy.hpp"
#include "unle/nn.hpp"
#include "unle/samplers.hpp"
#include "unle/tasks.hpp"

namespace unle {

enum class PosteriorKind { standard, doubly_intractable };

/// p(theta) exp(-E(x_o, theta)), divided by Z(theta) (doubly intractable) or
/// by exp(LZ(theta)) when a log-normalizer network is attached.
struct PosteriorModel {
  const Prior* prior = nullptr;
  std::shared_ptr<const ConditionalEnergy> energy;
  Eigen::VectorXd x_o;
  PosteriorKind kind = PosteriorKind::standard;
  std::optional<nn::NetParams> lz_net;

  /// Unnormalized log-density; only defined for kind == standard.
  Target target() const;
  double log_density(const Eigen::VectorXd& theta) const;
};

struct SamplerConfig {
  int chains = 1000;
  int warmup = 500;
  int thin = 5;
  /// Exchange sampler: inner MALA steps per update, and adaptive sweeps.
  int inner_steps = 100;
  int exchange_warmup = 200;
  /// Prior draws used to importance-resample chain starting points.
  int candidates = 10000;
  double init_step_size = 0.1;

  void validate() const;
  nlohmann::json to_json() const;
};

/// n draws (columns). Standard posteriors run MALA chains, doubly-intractable
/// ones run exchange chains. Chains start from `init` columns when given,
/// otherwise from prior draws resampled by their unnormalized posterior weight.
Eigen::MatrixXd posterior_sample(const PosteriorModel& p, int n, const SamplerConfig& cfg,
                                 const RandomStream& rng, const Eigen::MatrixXd* init = nullptr,
                                 nlohmann::json* diagnostics = nullptr);

struct DiviConfig {
  int n = 1000;
  int M = 5;
  int inner_steps = 100;
  int max_iter = 500;
  double learning_rate = 0.01;
  int width = 50;
  int depth = 4;

  void validate() const;
  nlohmann::json to_json() const;
};

/// Scalar-output network on theta for LZ_eta.
nn::NetParams make_lz_net(Eigen::Index theta_dim, const DiviConfig& cfg, RandomStream& rng);

/// Column i: (1/M) sum_m grad_theta E(x_m, theta_i) with x_m drawn by M inner
/// MALA chains targeting q(. | theta_i), started at x_init column i (or the
/// single column of x_init).
Eigen::MatrixXd divi_expectations(const ConditionalEnergy& e, const Eigen::MatrixXd& thetas,
                                  const Eigen::MatrixXd& x_init, int M, int inner_steps,
                                  const RandomStream& rng, double init_step_size = 0.1);

/// (1/n) sum_i || grad LZ(theta_i) + expectations_i ||^2
double divi_loss(const nn::NetParams& lz, const Eigen::MatrixXd& thetas,
                 const Eigen::MatrixXd& expectations);

/// Full-batch Adam on divi_loss; returns the per-iteration loss.
std::vector<double> fit_lz_net(nn::NetParams& lz, const Eigen::MatrixXd& thetas,
                               const Eigen::MatrixXd& expectations, int max_iter,
                               double learning_rate);

/// Trains a log-normalizer network for a doubly-intractable posterior from
/// parameters resampled out of `proposal` (theta_dim x K) and returns the
/// corrected standard posterior. `x_init` (x_dim x K, or one column) seeds the
/// inner chains.
PosteriorModel divi(const PosteriorModel& posterior, const Eigen::MatrixXd& proposal,
                    const Eigen::MatrixXd& x_init, const nn::NetParams& eta0,
                    const DiviConfig& cfg, const RandomStream& rng,
                    std::vector<double>* loss_trace = nullptr);

/// Conditional training with the log-normalizer network updated online from
/// every batch of refreshed particles. With `update_eta` false the energy
/// follows maximize_cebm_log_l exactly.
struct OnlineDiviResult {
  ConditionalTrainResult train;
  std::vector<double> eta_loss;
};
OnlineDiviResult divi_online(const Dataset& data, ConditionalEnergy& energy, nn::NetParams& eta,
                             const TrainConfig& cfg, const RandomStream& rng,
                             ConditionalTrainState& state, double eta_learning_rate = 0.01,
                             bool update_eta = true);

enum class Method { aunle, sunle_exchange, sunle_divi };
std::string_view to_string(Method m);
Method method_from_string(std::string_view s);

struct PipelineConfig {
  TrainConfig train;
  SamplerConfig sampler;
  DiviConfig divi;
  int energy_width = 50;
  int energy_depth = 4;
  /// Posterior draws returned after the final round.
  int final_samples = 1000;

  nlohmann::json to_json() const;
};

struct RoundTiming {
  double simulate = 0.0;  // seconds
  double train = 0.0;
  double infer = 0.0;
};

struct RoundRecord {
  int round = 0;
  Dataset data;  // pairs simulated in this round
  std::size_t invalid_simulations = 0;
  nlohmann::json energy_checkpoint;
  nlohmann::json lz_checkpoint;  // null without a log-normalizer network
  Eigen::MatrixXd posterior_samples;
  std::vector<TrainLogRow> train_log;
  nlohmann::json sampler_diagnostics;
  RoundTiming timing;
};

struct PipelineResult {
  PosteriorModel posterior;
  std::shared_ptr<ConditionalEnergy> energy;
  std::vector<RoundRecord> rounds;
  Dataset data;
  Eigen::MatrixXd samples;  // final posterior draws
};

/// Amortized pipeline: N prior simulations, tilted joint training, standard
/// MCMC on p(theta) exp(-E(x_o, theta)).
PipelineResult aunle(const Task& task, int budget, const Eigen::VectorXd& x_o,
                     const PipelineConfig& cfg, const RandomStream& rng);

/// Sequential pipeline with R rounds of budget/R simulations each.
PipelineResult sunle(const Task& task, int budget, int rounds, const Eigen::VectorXd& x_o,
                     const PipelineConfig& cfg, Method inference, const RandomStream& rng);

}  // namespace unle
