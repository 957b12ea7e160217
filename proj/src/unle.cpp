#include "unle/unle.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "unle/errors.hpp"

namespace unle {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

MatrixXd prior_draws(const Prior& prior, Index n, const RandomStream& rng) {
  MatrixXd out(prior.dim(), n);
  for (Index i = 0; i < n; ++i) {
    RandomStream s = rng.child(static_cast<std::uint64_t>(i));
    out.col(i) = prior.sample(s);
  }
  return out;
}

// Systematic selection of `count` indices proportional to exp(log_w).
std::vector<Index> resample_indices(const VectorXd& log_w, Index count, double u) {
  const double lse = log_sum_exp(log_w);
  if (!std::isfinite(lse))
    throw Error(ErrorKind::initialization_failure,
                "no candidate has a finite unnormalized posterior density");
  const VectorXd w = (log_w.array() - lse).exp().matrix();
  std::vector<Index> idx;
  idx.reserve(static_cast<std::size_t>(count));
  double cumulative = w[0];
  Index j = 0;
  for (Index c = 0; c < count; ++c) {
    const double point = (static_cast<double>(c) + u) / static_cast<double>(count);
    while (point >= cumulative && j < w.size() - 1) cumulative += w[++j];
    idx.push_back(j);
  }
  return idx;
}

void lz_value_and_grad(const nn::NetParams& lz, const MatrixXd& thetas, VectorXd& values,
                       MatrixXd& grads) {
  nn::value_and_input_grad_batch(lz, thetas, values, grads);
}

void check_invalid(const Task& task, std::size_t attempts, std::size_t invalid) {
  if (attempts > 0 && 2 * invalid > attempts)
    throw Error(ErrorKind::task_unsuitable,
                "task '" + task.name() + "': " + std::to_string(invalid) + " of " +
                    std::to_string(attempts) + " simulations were invalid");
}

}  // namespace

// ---------------------------------------------------------------------------

Target PosteriorModel::target() const {
  if (kind != PosteriorKind::standard)
    throw Error(ErrorKind::unsupported,
                "a doubly-intractable posterior can only be sampled with the exchange sampler");
  if (!prior || !energy) throw std::invalid_argument("posterior model is incomplete");
  if (x_o.size() != energy->x_dim()) throw std::invalid_argument("x_o has wrong dimension");
  const Prior* pr = prior;
  auto e = energy;
  const VectorXd xo = x_o;
  const auto lz = lz_net;
  const Index dt = e->theta_dim();
  return Target(
      dt,
      [pr, e, xo, lz, dt](const MatrixXd& pts, VectorXd& logp, MatrixXd* grad) {
        VectorXd en;
        MatrixXd g;
        e->evaluate(stack_inputs(xo, pts), en, grad ? &g : nullptr);
        logp = -en;
        if (grad) *grad = -g.bottomRows(dt);
        if (lz) {
          VectorXd lv;
          MatrixXd lg;
          lz_value_and_grad(*lz, pts, lv, lg);
          logp -= lv;
          if (grad) *grad -= lg;
        }
        for (Index c = 0; c < pts.cols(); ++c) {
          const VectorXd t = pts.col(c);
          const double lp = pr->log_density(t);
          logp[c] = std::isfinite(lp) ? logp[c] + lp : kNegInf;
          if (grad) grad->col(c) += pr->grad_log_density(t);
        }
      },
      prior->support());
}

double PosteriorModel::log_density(const VectorXd& theta) const {
  return target().log_density(theta);
}

void SamplerConfig::validate() const {
  if (chains < 1 || warmup < 0 || thin < 1 || inner_steps < 1 || exchange_warmup < 0 ||
      candidates < 1 || !(init_step_size > 0.0))
    throw std::invalid_argument("invalid sampler configuration");
}

nlohmann::json SamplerConfig::to_json() const {
  return {{"chains", chains},         {"warmup", warmup},
          {"thin", thin},             {"inner_steps", inner_steps},
          {"exchange_warmup", exchange_warmup}, {"candidates", candidates},
          {"init_step_size", init_step_size}};
}

MatrixXd posterior_sample(const PosteriorModel& p, int n, const SamplerConfig& cfg,
                          const RandomStream& rng, const MatrixXd* init, nlohmann::json* diagnostics) {
  if (n < 0) throw std::invalid_argument("posterior_sample: negative sample count");
  cfg.validate();
  if (!p.prior || !p.energy) throw std::invalid_argument("posterior model is incomplete");
  const Index dt = p.prior->dim();
  if (n == 0) return MatrixXd(dt, 0);
  const Index chains = std::min<Index>(cfg.chains, n);

  MatrixXd starts(dt, chains);
  if (init && init->cols() > 0) {
    if (init->rows() != dt) throw std::invalid_argument("initial samples have wrong dimension");
    RandomStream pick = rng.child(3);
    for (Index c = 0; c < chains; ++c)
      starts.col(c) = init->col(chains <= init->cols()
                                    ? (c * init->cols()) / chains
                                    : static_cast<Index>(pick() % static_cast<std::uint64_t>(init->cols())));
  } else {
    const MatrixXd cand = prior_draws(*p.prior, cfg.candidates, rng.child(2));
    VectorXd e;
    p.energy->evaluate(stack_inputs(p.x_o, cand), e, nullptr);
    VectorXd log_w = -e;
    if (p.lz_net) log_w -= nn::forward_batch(*p.lz_net, cand).row(0).transpose();
    for (Index i = 0; i < log_w.size(); ++i)
      if (std::isnan(log_w[i])) log_w[i] = kNegInf;
    RandomStream pick = rng.child(2).child(~std::uint64_t{0});
    const auto idx = resample_indices(log_w, chains, pick.uniform());
    for (Index c = 0; c < chains; ++c) starts.col(c) = cand.col(idx[static_cast<std::size_t>(c)]);
  }

  const int per_chain = static_cast<int>((n + chains - 1) / chains);
  MatrixXd out(dt, n);
  auto store = [&](int k, const MatrixXd& positions) {
    for (Index c = 0; c < chains; ++c) {
      const Index i = static_cast<Index>(k) * chains + c;
      if (i < n) out.col(i) = positions.col(c);
    }
  };

  if (p.kind == PosteriorKind::standard) {
    const Target target = p.target();
    MalaEnsemble ens(target, starts, VectorXd::Constant(chains, cfg.init_step_size), rng.child(4));
    ens.run(cfg.warmup, true);
    ens.reset_counters();
    for (int k = 0; k < per_chain; ++k) {
      ens.run(cfg.thin, false);
      store(k, ens.positions());
    }
    if (diagnostics) {
      SamplerDiagnostics d;
      d.acceptance_rate = ens.acceptance_rate();
      d.restarts = ens.restarts();
      d.step_size_min = ens.step_sizes().minCoeff();
      d.step_size_mean = ens.step_sizes().mean();
      d.step_size_max = ens.step_sizes().maxCoeff();
      *diagnostics = d.to_json();
      (*diagnostics)["sampler"] = "mala";
      (*diagnostics)["chains"] = chains;
    }
    return out;
  }

  // Exchange chains; random-walk scale from the spread of the starting points.
  VectorXd scale(dt);
  for (Index k = 0; k < dt; ++k) {
    const Eigen::ArrayXd row = starts.row(k).transpose().array();
    const double sd = chains > 1 ? std::sqrt((row - row.mean()).square().sum() / (chains - 1)) : 0.0;
    scale[k] = std::max(2.38 / std::sqrt(static_cast<double>(dt)) * sd, 1e-3);
  }
  ExchangeChains ex(starts, p.x_o, scale, cfg.init_step_size);
  const RandomStream sweeps = rng.child(5);
  std::uint64_t sweep = 0;
  for (int s = 0; s < cfg.exchange_warmup; ++s)
    exchange_sweep(*p.energy, *p.prior, p.x_o, ex, cfg.inner_steps, sweeps.child(sweep++), true);
  std::fill(ex.accepted.begin(), ex.accepted.end(), 0);
  std::fill(ex.proposed.begin(), ex.proposed.end(), 0);
  for (int k = 0; k < per_chain; ++k) {
    for (int s = 0; s < cfg.thin; ++s)
      exchange_sweep(*p.energy, *p.prior, p.x_o, ex, cfg.inner_steps, sweeps.child(sweep++), false);
    store(k, ex.theta);
  }
  if (diagnostics) {
    *diagnostics = {{"sampler", "exchange"},
                    {"chains", chains},
                    {"acceptance_rate", ex.acceptance_rate()},
                    {"inner_steps", cfg.inner_steps},
                    {"aux_step_size", {{"min", ex.aux_step.minCoeff()},
                                       {"mean", ex.aux_step.mean()},
                                       {"max", ex.aux_step.maxCoeff()}}}};
  }
  return out;
}

// ---------------------------------------------------------------------------

void DiviConfig::validate() const {
  if (n < 1) throw std::invalid_argument("DIVI needs n >= 1");
  if (M < 1 || inner_steps < 1 || max_iter < 0 || !(learning_rate > 0.0) || width < 1 || depth < 1)
    throw std::invalid_argument("invalid DIVI configuration");
}

nlohmann::json DiviConfig::to_json() const {
  return {{"n", n},           {"M", M},           {"inner_steps", inner_steps},
          {"max_iter", max_iter}, {"learning_rate", learning_rate},
          {"width", width},   {"depth", depth}};
}

nn::NetParams make_lz_net(Index theta_dim, const DiviConfig& cfg, RandomStream& rng) {
  std::vector<int> sizes{static_cast<int>(theta_dim)};
  for (int i = 0; i < cfg.depth; ++i) sizes.push_back(cfg.width);
  sizes.push_back(1);
  return nn::net_init(sizes, nn::Activation::swish, rng);
}

MatrixXd divi_expectations(const ConditionalEnergy& e, const MatrixXd& thetas,
                           const MatrixXd& x_init, int M, int inner_steps, const RandomStream& rng,
                           double init_step_size) {
  const Index n = thetas.cols(), dx = e.x_dim(), dt = e.theta_dim();
  if (M < 1 || inner_steps < 0) throw std::invalid_argument("divi_expectations: bad M or steps");
  if (thetas.rows() != dt || x_init.rows() != dx ||
      (x_init.cols() != n && x_init.cols() != 1))
    throw std::invalid_argument("divi_expectations: dimension mismatch");
  if (n == 0) return MatrixXd(dt, 0);

  const Index total = n * M;
  MatrixXd theta_rep(dt, total), x0(dx, total);
  for (Index i = 0; i < n; ++i)
    for (int m = 0; m < M; ++m) {
      theta_rep.col(i * M + m) = thetas.col(i);
      x0.col(i * M + m) = x_init.col(x_init.cols() == 1 ? 0 : i);
    }
  const Target target(dx, [&](const MatrixXd& pts, VectorXd& logp, MatrixXd* grad) {
    VectorXd en;
    MatrixXd g;
    e.evaluate(stack_inputs(pts, theta_rep), en, grad ? &g : nullptr);
    logp = -en;
    if (grad) *grad = -g.topRows(dx);
  });
  MatrixXd x = x0;
  if (inner_steps > 0) {
    MalaEnsemble ens(target, x0, VectorXd::Constant(total, init_step_size), rng);
    const int adapt_steps = inner_steps / 2;
    ens.run(adapt_steps, true);
    ens.run(inner_steps - adapt_steps, false);
    x = ens.positions();
  }
  VectorXd en;
  MatrixXd g;
  e.evaluate(stack_inputs(x, theta_rep), en, &g);
  MatrixXd out = MatrixXd::Zero(dt, n);
  for (Index i = 0; i < n; ++i)
    for (int m = 0; m < M; ++m) out.col(i) += g.col(i * M + m).bottomRows(dt);
  return out / static_cast<double>(M);
}

double divi_loss(const nn::NetParams& lz, const MatrixXd& thetas, const MatrixXd& expectations) {
  if (thetas.cols() == 0) throw std::invalid_argument("divi_loss: no parameters");
  VectorXd v;
  MatrixXd g;
  lz_value_and_grad(lz, thetas, v, g);
  return (g + expectations).colwise().squaredNorm().mean();
}

std::vector<double> fit_lz_net(nn::NetParams& lz, const MatrixXd& thetas,
                               const MatrixXd& expectations, int max_iter, double learning_rate) {
  const Index n = thetas.cols();
  if (n == 0) throw std::invalid_argument("fit_lz_net: no parameters");
  if (expectations.rows() != thetas.rows() || expectations.cols() != n)
    throw std::invalid_argument("fit_lz_net: expectations have wrong shape");
  nn::AdamState adam = nn::adam_init(lz.param_count(), learning_rate);
  const VectorXd w = VectorXd::Constant(n, 2.0 / static_cast<double>(n));
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(max_iter));
  VectorXd params = lz.flatten();
  for (int k = 0; k < max_iter; ++k) {
    VectorXd v;
    MatrixXd g;
    lz_value_and_grad(lz, thetas, v, g);
    const MatrixXd residual = g + expectations;
    losses.push_back(residual.colwise().squaredNorm().mean());
    const VectorXd grad = nn::weighted_input_grad_param_grad(lz, thetas, residual, w);
    if (!grad.allFinite()) throw Error(ErrorKind::training_failure, "non-finite log-Z gradient");
    nn::adam_step(adam, params, grad);
    lz.assign(params);
  }
  return losses;
}

PosteriorModel divi(const PosteriorModel& posterior, const MatrixXd& proposal,
                    const MatrixXd& x_init, const nn::NetParams& eta0, const DiviConfig& cfg,
                    const RandomStream& rng, std::vector<double>* loss_trace) {
  cfg.validate();
  if (!posterior.prior || !posterior.energy) throw std::invalid_argument("posterior model is incomplete");
  const Index dt = posterior.energy->theta_dim();
  if (proposal.rows() != dt || proposal.cols() < 1)
    throw std::invalid_argument("divi: proposal must hold at least one theta column");
  if (x_init.cols() != proposal.cols() && x_init.cols() != 1)
    throw std::invalid_argument("divi: x_init must match the proposal columns");
  if (eta0.input_dim() != dt || eta0.output_dim() != 1)
    throw std::invalid_argument("divi: log-Z net must map theta to a scalar");

  RandomStream pick = rng.child(0);
  MatrixXd thetas(dt, cfg.n), xs(x_init.rows(), cfg.n);
  for (Index i = 0; i < cfg.n; ++i) {
    const Index j = static_cast<Index>(pick() % static_cast<std::uint64_t>(proposal.cols()));
    thetas.col(i) = proposal.col(j);
    xs.col(i) = x_init.col(x_init.cols() == 1 ? 0 : j);
  }
  const MatrixXd s =
      divi_expectations(*posterior.energy, thetas, xs, cfg.M, cfg.inner_steps, rng.child(1));
  nn::NetParams lz = eta0;
  auto losses = fit_lz_net(lz, thetas, s, cfg.max_iter, cfg.learning_rate);
  if (loss_trace) *loss_trace = std::move(losses);

  PosteriorModel out = posterior;
  out.kind = PosteriorKind::standard;
  out.lz_net = std::move(lz);
  return out;
}

OnlineDiviResult divi_online(const Dataset& data, ConditionalEnergy& energy, nn::NetParams& eta,
                             const TrainConfig& cfg, const RandomStream& rng,
                             ConditionalTrainState& state, double eta_learning_rate,
                             bool update_eta) {
  if (eta.input_dim() != energy.theta_dim() || eta.output_dim() != 1)
    throw std::invalid_argument("divi_online: log-Z net must map theta to a scalar");
  OnlineDiviResult result;
  nn::AdamState adam = nn::adam_init(eta.param_count(), eta_learning_rate);
  VectorXd params = eta.flatten();
  ConditionalHook hook;
  if (update_eta) {
    hook = [&](int, const MatrixXd& thetas, const MatrixXd& particles) {
      VectorXd en;
      MatrixXd g;
      energy.evaluate(stack_inputs(particles, thetas), en, &g);
      const MatrixXd s = g.bottomRows(energy.theta_dim());
      VectorXd v;
      MatrixXd lg;
      lz_value_and_grad(eta, thetas, v, lg);
      const MatrixXd residual = lg + s;
      result.eta_loss.push_back(residual.colwise().squaredNorm().mean());
      const VectorXd w = VectorXd::Constant(thetas.cols(), 2.0 / static_cast<double>(thetas.cols()));
      nn::adam_step(adam, params, nn::weighted_input_grad_param_grad(eta, thetas, residual, w));
      eta.assign(params);
    };
  }
  result.train = maximize_cebm_log_l(data, energy, cfg, rng, state, hook);
  return result;
}

// ---------------------------------------------------------------------------

std::string_view to_string(Method m) {
  switch (m) {
    case Method::aunle: return "aunle";
    case Method::sunle_exchange: return "sunle-exchange";
    case Method::sunle_divi: return "sunle-divi";
  }
  return "?";
}

Method method_from_string(std::string_view s) {
  if (s == "aunle") return Method::aunle;
  if (s == "sunle-exchange") return Method::sunle_exchange;
  if (s == "sunle-divi") return Method::sunle_divi;
  throw std::invalid_argument("unknown method '" + std::string(s) + "'");
}

nlohmann::json PipelineConfig::to_json() const {
  return {{"train", train.to_json()},
          {"sampler", sampler.to_json()},
          {"divi", divi.to_json()},
          {"energy_width", energy_width},
          {"energy_depth", energy_depth},
          {"final_samples", final_samples}};
}

namespace {

std::shared_ptr<NeuralEnergy> fresh_energy(const Task& task, const Dataset& data,
                                           const PipelineConfig& cfg, const RandomStream& rng) {
  RandomStream init = rng;
  auto e = std::make_shared<NeuralEnergy>(NeuralEnergy::create(
      task.x_dim(), task.theta_dim(), init, cfg.energy_width, cfg.energy_depth));
  if (data.size() >= 2) e->fit_standardization(data.joint_matrix());
  return e;
}

}  // namespace

PipelineResult aunle(const Task& task, int budget, const VectorXd& x_o, const PipelineConfig& cfg,
                     const RandomStream& rng) {
  if (budget < 1) throw std::invalid_argument("aunle needs a budget of at least one simulation");
  if (x_o.size() != task.x_dim()) throw std::invalid_argument("x_o has wrong dimension");
  const RandomStream r0 = rng.child(0);
  RoundRecord rec;
  rec.round = 0;

  auto t0 = std::chrono::steady_clock::now();
  const MatrixXd thetas = prior_draws(task.prior(), budget, r0.child(0));
  SimulationReport sim = simulate_batch(task, thetas, 0, r0.child(1));
  check_invalid(task, sim.attempts, sim.invalid);
  rec.timing.simulate = seconds_since(t0);
  rec.invalid_simulations = sim.invalid;
  rec.data = sim.data;

  t0 = std::chrono::steady_clock::now();
  auto energy = fresh_energy(task, sim.data, cfg, r0.child(2));
  JointTrainState state;
  JointTrainResult tr =
      maximize_ebm_log_l(sim.data, *energy, task.prior(), cfg.train, r0.child(3), state);
  rec.timing.train = seconds_since(t0);
  rec.train_log = std::move(tr.log);
  rec.energy_checkpoint = energy->to_json();
  rec.lz_checkpoint = nullptr;

  t0 = std::chrono::steady_clock::now();
  PipelineResult out;
  out.posterior.prior = &task.prior();
  out.posterior.energy = energy;
  out.posterior.x_o = x_o;
  out.posterior.kind = PosteriorKind::standard;
  out.samples = posterior_sample(out.posterior, cfg.final_samples, cfg.sampler, r0.child(4), nullptr,
                                 &rec.sampler_diagnostics);
  rec.timing.infer = seconds_since(t0);
  rec.sampler_diagnostics["training"] = tr.last_sampler.to_json();
  rec.posterior_samples = out.samples;

  out.energy = energy;
  out.data = sim.data;
  out.rounds.push_back(std::move(rec));
  return out;
}

PipelineResult sunle(const Task& task, int budget, int rounds, const VectorXd& x_o,
                     const PipelineConfig& cfg, Method inference, const RandomStream& rng) {
  if (rounds < 1) throw std::invalid_argument("sunle needs at least one round");
  if (budget < rounds) throw std::invalid_argument("sunle needs budget >= rounds");
  if (inference == Method::aunle) throw std::invalid_argument("sunle needs an exchange or divi mode");
  if (x_o.size() != task.x_dim()) throw std::invalid_argument("x_o has wrong dimension");

  auto round_budget = [&](int r) { return budget / rounds + (r < budget % rounds ? 1 : 0); };

  PipelineResult out;
  out.data = Dataset(task.theta_dim(), task.x_dim());
  out.posterior.prior = &task.prior();
  out.posterior.x_o = x_o;
  std::shared_ptr<NeuralEnergy> energy;
  ConditionalTrainState state;
  std::optional<nn::NetParams> eta;
  MatrixXd previous;

  for (int r = 0; r < rounds; ++r) {
    const RandomStream rr = rng.child(static_cast<std::uint64_t>(r));
    RoundRecord rec;
    rec.round = r;

    auto t0 = std::chrono::steady_clock::now();
    const MatrixXd proposal =
        r == 0 ? prior_draws(task.prior(), round_budget(0), rr.child(0)) : previous;
    SimulationReport sim = simulate_batch(task, proposal, r, rr.child(1));
    check_invalid(task, sim.attempts, sim.invalid);
    if (sim.data.empty())
      throw Error(ErrorKind::task_unsuitable, "round " + std::to_string(r) + " produced no valid simulations");
    out.data.append(sim.data);
    rec.timing.simulate = seconds_since(t0);
    rec.invalid_simulations = sim.invalid;
    rec.data = sim.data;

    t0 = std::chrono::steady_clock::now();
    if (!energy) energy = fresh_energy(task, out.data, cfg, rr.child(2));
    ConditionalTrainResult tr = maximize_cebm_log_l(out.data, *energy, cfg.train, rr.child(3), state);
    rec.timing.train = seconds_since(t0);
    rec.train_log = std::move(tr.log);
    rec.energy_checkpoint = energy->to_json();

    t0 = std::chrono::steady_clock::now();
    PosteriorModel post;
    post.prior = &task.prior();
    post.energy = energy;
    post.x_o = x_o;
    post.kind = PosteriorKind::doubly_intractable;
    if (inference == Method::sunle_divi) {
      if (!eta) {
        RandomStream init = rr.child(5);
        eta = make_lz_net(task.theta_dim(), cfg.divi, init);
      }
      std::vector<double> losses;
      post = divi(post, sim.data.theta_matrix(), sim.data.x_matrix(), *eta, cfg.divi, rr.child(6),
                  &losses);
      eta = post.lz_net;
      rec.lz_checkpoint = nn::to_json(*eta);
    } else {
      rec.lz_checkpoint = nullptr;
    }
    const int n_draw = r + 1 < rounds ? round_budget(r + 1) : cfg.final_samples;
    const MatrixXd* init = previous.cols() > 0 ? &previous : nullptr;
    MatrixXd samples = posterior_sample(post, n_draw, cfg.sampler, rr.child(7), init,
                                        &rec.sampler_diagnostics);
    rec.timing.infer = seconds_since(t0);
    rec.posterior_samples = samples;
    previous = std::move(samples);
    out.posterior = post;
    out.rounds.push_back(std::move(rec));
  }
  out.energy = energy;
  out.samples = previous;
  return out;
}

}  // namespace unle
