#include "unle/ebm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>

#include "unle/csv.hpp"
#include "unle/errors.hpp"

namespace unle {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}  // namespace

std::string_view to_string(TrainMode m) { return m == TrainMode::mcmc ? "mcmc" : "smc"; }

TrainMode train_mode_from_string(std::string_view s) {
  if (s == "mcmc") return TrainMode::mcmc;
  if (s == "smc") return TrainMode::smc;
  throw std::invalid_argument("unknown training mode '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  if (max_iter < 0) throw std::invalid_argument("max_iter must be non-negative");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (particles < 1 || batch_size < 1) throw std::invalid_argument("particle and batch counts must be positive");
  if (mcmc_steps < 0 || warmup_steps < 0) throw std::invalid_argument("step counts must be non-negative");
  if (smc.L < 1 || smc.kernel_steps < 0) throw std::invalid_argument("bad SMC configuration");
  if (!(init_step_size > 0.0)) throw std::invalid_argument("initial step size must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"max_iter", max_iter},
          {"learning_rate", learning_rate},
          {"particles", particles},
          {"mcmc_steps", mcmc_steps},
          {"warmup_steps", warmup_steps},
          {"batch_size", batch_size},
          {"mode", std::string(to_string(mode))},
          {"smc", {{"L", smc.L}, {"kernel_steps", smc.kernel_steps},
                   {"resample_threshold", smc.resample_threshold}}},
          {"init_step_size", init_step_size}};
}

void write_train_log_csv(std::ostream& out, const std::vector<TrainLogRow>& log) {
  csv::write_row(out, {"iter", "data_term_norm", "model_term_norm", "mean_acceptance", "ess"});
  for (const auto& r : log)
    csv::write_row(out, {std::to_string(r.iter), csv::format_double(r.data_term_norm),
                         csv::format_double(r.model_term_norm),
                         csv::format_double(r.mean_acceptance),
                         std::isnan(r.ess) ? std::string() : csv::format_double(r.ess)});
}

double joint_tilted_logpdf(const ConditionalEnergy& e, const Prior& prior, const VectorXd& x,
                           const VectorXd& theta) {
  const double lp = prior.log_density(theta);
  if (!std::isfinite(lp)) return kNegInf;
  return lp - e.energy(x, theta);
}

double likelihood_logpdf(const ConditionalEnergy& e, const VectorXd& x, const VectorXd& theta) {
  return -e.energy(x, theta);
}

Target joint_target(const ConditionalEnergy& e, const Prior& prior) {
  const Index dx = e.x_dim(), dt = e.theta_dim();
  if (prior.dim() != dt) throw std::invalid_argument("prior and energy disagree on theta_dim");
  return Target(
      dx + dt,
      [&e, &prior, dt](const MatrixXd& pts, VectorXd& logp, MatrixXd* grad) {
        VectorXd energy;
        e.evaluate(pts, energy, grad);
        logp = -energy;
        if (grad) *grad = -*grad;
        for (Index c = 0; c < pts.cols(); ++c) {
          const VectorXd theta = pts.col(c).tail(dt);
          const double lp = prior.log_density(theta);
          logp[c] = std::isfinite(lp) ? logp[c] + lp : kNegInf;
          if (grad) grad->col(c).tail(dt) += prior.grad_log_density(theta);
        }
      },
      Support::concat(Support::unbounded(dx), prior.support()));
}

// ---------------------------------------------------------------------------

JointTrainResult maximize_ebm_log_l(const Dataset& data, ConditionalEnergy& energy,
                                    const Prior& prior, const TrainConfig& cfg,
                                    const RandomStream& rng, JointTrainState& state) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("maximize_ebm_log_l: empty dataset");
  if (data.x_dim != energy.x_dim() || data.theta_dim != energy.theta_dim())
    throw std::invalid_argument("maximize_ebm_log_l: dataset and energy dimensions differ");

  const MatrixXd joint = data.joint_matrix();
  const Index n = joint.cols();

  if (state.cloud.size() == 0) {
    // q_0: the empirical distribution of the data.
    const Index np = cfg.particles;
    MatrixXd init(joint.rows(), np);
    if (np == n) {
      init = joint;
    } else {
      RandomStream pick = rng.child(0xC10D);
      for (Index j = 0; j < np; ++j)
        init.col(j) = joint.col(static_cast<Index>(pick() % static_cast<std::uint64_t>(n)));
    }
    state.cloud = ParticleCloud(std::move(init), cfg.init_step_size);
    state.warmed_up = false;
  }
  if (state.adam.m.size() != energy.param_count())
    state.adam = nn::adam_init(energy.param_count(), cfg.learning_rate);
  state.adam.learning_rate = cfg.learning_rate;

  const VectorXd data_weights = VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  JointTrainResult result;
  std::unique_ptr<ConditionalEnergy> previous;

  for (int k = 0; k < cfg.max_iter; ++k) {
    const int it = state.iterations_done;
    const RandomStream rng_k = rng.child(static_cast<std::uint64_t>(it));
    const Target target = joint_target(energy, prior);
    TrainLogRow row;
    row.iter = it;
    row.ess = kNaN;
    try {
      if (cfg.mode == TrainMode::smc && state.warmed_up && previous) {
        const Target nu0 = joint_target(*previous, prior);
        SmcResult r = smc_run(target, nu0, state.cloud, cfg.smc, rng_k);
        state.cloud = std::move(r.cloud);
        row.mean_acceptance = r.diagnostics.acceptance_rate;
        row.ess = r.diagnostics.ess.empty() ? kNaN : r.diagnostics.ess.back();
        result.last_sampler = r.diagnostics;
      } else {
        SamplerDiagnostics diag;
        const VectorXd w = state.cloud.weights;
        state.cloud = run_chains(target, state.cloud, cfg.mcmc_steps,
                                 cfg.warmup_steps, rng_k, &diag);
        // Positions moved independently; a weighted cloud keeps its weights.
        state.cloud.weights = w;
        state.warmed_up = true;
        row.mean_acceptance = diag.acceptance_rate;
        result.last_sampler = diag;
      }
    } catch (const Error& e) {
      throw Error(ErrorKind::training_failure,
                  "particle cloud collapsed at iteration " + std::to_string(it) + ": " + e.what());
    }

    const VectorXd g_data = energy.weighted_param_grad(joint, data_weights);
    const VectorXd g_model = energy.weighted_param_grad(state.cloud.particles, state.cloud.weights);
    const VectorXd grad = g_data - g_model;
    if (!grad.allFinite())
      throw Error(ErrorKind::training_failure,
                  "non-finite gradient at iteration " + std::to_string(it));
    row.data_term_norm = g_data.norm();
    row.model_term_norm = g_model.norm();

    if (cfg.mode == TrainMode::smc) previous = energy.clone();
    VectorXd params = energy.params();
    nn::adam_step(state.adam, params, grad);
    energy.set_params(params);
    ++state.iterations_done;
    result.log.push_back(row);
  }
  return result;
}

// ---------------------------------------------------------------------------

void ConditionalTrainState::extend(const Dataset& data, double init_step_size) {
  const Index have = slots.cols(), want = static_cast<Index>(data.size());
  if (have > want) throw std::invalid_argument("dataset shrank below the number of particle slots");
  if (have == want) return;
  MatrixXd grown(data.x_dim, want);
  if (have > 0) grown.leftCols(have) = slots;
  VectorXd steps(want);
  if (have > 0) steps.head(have) = step_sizes;
  for (Index i = have; i < want; ++i) {
    grown.col(i) = data.xs[static_cast<std::size_t>(i)];
    steps[i] = init_step_size;
  }
  slots = std::move(grown);
  step_sizes = std::move(steps);
}

namespace {

// Conditional targets: column c samples x with theta fixed to thetas.col(c).
Target conditional_target(const ConditionalEnergy& e, const MatrixXd& thetas) {
  const Index dx = e.x_dim();
  return Target(dx, [&e, &thetas, dx](const MatrixXd& pts, VectorXd& logp, MatrixXd* grad) {
    VectorXd energy;
    MatrixXd g;
    e.evaluate(stack_inputs(pts, thetas), energy, grad ? &g : nullptr);
    logp = -energy;
    if (grad) *grad = -g.topRows(dx);
  });
}

}  // namespace

ConditionalTrainResult maximize_cebm_log_l(const Dataset& data, ConditionalEnergy& energy,
                                           const TrainConfig& cfg, const RandomStream& rng,
                                           ConditionalTrainState& state,
                                           const ConditionalHook& hook) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("maximize_cebm_log_l: empty dataset");
  if (data.x_dim != energy.x_dim() || data.theta_dim != energy.theta_dim())
    throw std::invalid_argument("maximize_cebm_log_l: dataset and energy dimensions differ");
  state.extend(data, cfg.init_step_size);
  if (!state.adam_ready || state.adam.m.size() != energy.param_count()) {
    state.adam = nn::adam_init(energy.param_count(), cfg.learning_rate);
    state.adam_ready = true;
  }
  state.adam.learning_rate = cfg.learning_rate;

  const Index n = static_cast<Index>(data.size());
  const Index b = std::min<Index>(n, cfg.batch_size);
  const MatrixXd thetas_all = data.theta_matrix();
  const MatrixXd xs_all = data.x_matrix();
  std::vector<Index> order(static_cast<std::size_t>(n));
  ConditionalTrainResult result;

  for (int k = 0; k < cfg.max_iter; ++k) {
    const int it = state.iterations_done;
    const RandomStream rng_k = rng.child(static_cast<std::uint64_t>(it));

    // Batch without replacement: partial Fisher-Yates, then sorted.
    std::iota(order.begin(), order.end(), Index{0});
    if (b < n) {
      RandomStream shuffle = rng_k.child(0);
      for (Index i = 0; i < b; ++i) {
        const Index j = i + static_cast<Index>(shuffle() % static_cast<std::uint64_t>(n - i));
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
      }
      std::sort(order.begin(), order.begin() + b);
    }
    std::vector<Index> batch(order.begin(), order.begin() + b);

    MatrixXd thetas(data.theta_dim, b), particles(data.x_dim, b), xs(data.x_dim, b);
    VectorXd steps(b);
    for (Index j = 0; j < b; ++j) {
      const Index i = batch[static_cast<std::size_t>(j)];
      thetas.col(j) = thetas_all.col(i);
      xs.col(j) = xs_all.col(i);
      particles.col(j) = state.slots.col(i);
      steps[j] = state.step_sizes[i];
    }

    TrainLogRow row;
    row.iter = it;
    row.ess = kNaN;
    try {
      if (cfg.warmup_steps > 0) {
        const Target warm_target = conditional_target(energy, thetas);
        MalaEnsemble warm(warm_target, particles, steps, rng_k.child(1));
        warm.run(cfg.warmup_steps, true);
        particles = warm.positions();
        steps = warm.step_sizes();
      }
      if (cfg.mcmc_steps > 0) {
        const Target target = conditional_target(energy, thetas);
        MalaEnsemble ens(target, particles, steps, rng_k.child(2));
        ens.run(cfg.mcmc_steps, false);
        particles = ens.positions();
        row.mean_acceptance = ens.acceptance_rate();
      }
    } catch (const Error& e) {
      throw Error(ErrorKind::training_failure,
                  "particle slots collapsed at iteration " + std::to_string(it) + ": " + e.what());
    }

    for (Index j = 0; j < b; ++j) {
      const Index i = batch[static_cast<std::size_t>(j)];
      state.slots.col(i) = particles.col(j);
      state.step_sizes[i] = steps[j];
    }

    const VectorXd w = VectorXd::Constant(b, 1.0 / static_cast<double>(b));
    const VectorXd g_data = energy.weighted_param_grad(stack_inputs(xs, thetas), w);
    const VectorXd g_model = energy.weighted_param_grad(stack_inputs(particles, thetas), w);
    const VectorXd grad = g_data - g_model;
    if (!grad.allFinite())
      throw Error(ErrorKind::training_failure,
                  "non-finite gradient at iteration " + std::to_string(it));
    row.data_term_norm = g_data.norm();
    row.model_term_norm = g_model.norm();
    if (hook) hook(it, thetas, particles);

    VectorXd params = energy.params();
    nn::adam_step(state.adam, params, grad);
    energy.set_params(params);
    ++state.iterations_done;
    result.log.push_back(row);
  }
  return result;
}

}  // namespace unle
