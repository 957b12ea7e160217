#include "unle/samplers.hpp"

#include <algorithm>
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

bool finite_column(const MatrixXd& m, Index c) { return m.col(c).allFinite(); }

// The Jacobian-corrected density and gradient in unconstrained coordinates.
void pull_back(const Support& support, const MatrixXd& z, const VectorXd& logp_x,
               const MatrixXd& grad_x, VectorXd& logp_z, MatrixXd& grad_z) {
  const Index n = z.cols();
  logp_z.resize(n);
  grad_z.resize(z.rows(), n);
  if (!support.any_bounded()) {
    logp_z = logp_x;
    grad_z = grad_x;
    return;
  }
#pragma omp parallel for schedule(static)
  for (Index c = 0; c < n; ++c) {
    const VectorXd zc = z.col(c);
    logp_z[c] = logp_x[c] + support.log_jacobian(zc);
    grad_z.col(c) = support.pullback_grad(zc, grad_x.col(c));
  }
}

MatrixXd map_columns(const MatrixXd& m, const Support& support, bool to_unconstrained) {
  if (!support.any_bounded()) return m;
  MatrixXd out(m.rows(), m.cols());
#pragma omp parallel for schedule(static)
  for (Index c = 0; c < m.cols(); ++c)
    out.col(c) = to_unconstrained ? support.to_unconstrained(m.col(c))
                                  : support.to_constrained(m.col(c));
  return out;
}

double log_proposal(const VectorXd& to, const VectorXd& from, const VectorXd& grad_from,
                    double sigma) {
  return -(to - from - 0.5 * sigma * sigma * grad_from).squaredNorm() / (2.0 * sigma * sigma);
}

}  // namespace

// ---------------------------------------------------------------------------

Target::Target(Index dim, Evaluate evaluate)
    : Target(dim, std::move(evaluate), Support::unbounded(dim)) {}

Target::Target(Index dim, Evaluate evaluate, Support support)
    : dim(dim), evaluate(std::move(evaluate)), support(std::move(support)) {
  if (this->support.dim() != dim) throw std::invalid_argument("target support has wrong dimension");
}

double Target::log_density(const VectorXd& x) const {
  VectorXd lp;
  evaluate(x, lp, nullptr);
  return lp[0];
}

VectorXd Target::grad_log_density(const VectorXd& x) const {
  VectorXd lp;
  MatrixXd g;
  evaluate(x, lp, &g);
  return g.col(0);
}

ParticleCloud::ParticleCloud(MatrixXd particles_in, double step_size)
    : particles(std::move(particles_in)),
      weights(VectorXd::Constant(particles.cols(), 1.0 / static_cast<double>(particles.cols()))),
      step_sizes(VectorXd::Constant(particles.cols(), step_size)) {}

void ParticleCloud::validate() const {
  if (size() < 1) throw std::invalid_argument("particle cloud is empty");
  if (weights.size() != size() || step_sizes.size() != size())
    throw std::invalid_argument("particle cloud fields differ in size");
  if (!particles.allFinite()) throw std::invalid_argument("particle positions must be finite");
  if ((weights.array() < 0.0).any() || std::abs(weights.sum() - 1.0) > 1e-12)
    throw std::invalid_argument("particle weights must be non-negative and sum to one");
  if (!(step_sizes.array() > 0.0).all()) throw std::invalid_argument("step sizes must be positive");
}

// ---------------------------------------------------------------------------

void mala_step(const Target& target, ChainState& s, RandomStream& rng) {
  if (!(s.step_size > 0.0)) throw std::invalid_argument("step size must be positive");
  const Support& sup = target.support;
  const VectorXd z = sup.to_unconstrained(s.position);

  VectorXd lp;
  MatrixXd gx, zm = z;
  target.evaluate(s.position, lp, &gx);
  VectorXd logp_z;
  MatrixXd grad_z;
  pull_back(sup, zm, lp, gx, logp_z, grad_z);

  const double sigma = s.step_size;
  const VectorXd xi = rng.normal_vector(z.size());
  const double log_u = std::log(rng.uniform());
  ++s.proposed;
  ++s.window_proposed;
  if (!std::isfinite(logp_z[0]) || !grad_z.allFinite()) return;

  const VectorXd g = grad_z.col(0);
  const VectorXd zp = z + 0.5 * sigma * sigma * g + sigma * xi;
  const VectorXd xp = sup.to_constrained(zp);
  VectorXd lpp;
  MatrixXd gxp;
  target.evaluate(xp, lpp, &gxp);
  VectorXd logp_zp;
  MatrixXd grad_zp;
  pull_back(sup, zp, lpp, gxp, logp_zp, grad_zp);
  if (!std::isfinite(logp_zp[0]) || !grad_zp.allFinite()) return;

  const double log_alpha = logp_zp[0] - logp_z[0] + log_proposal(z, zp, grad_zp.col(0), sigma) -
                           log_proposal(zp, z, g, sigma);
  if (log_u < log_alpha) {
    s.position = xp;
    ++s.accepted;
    ++s.window_accepted;
  }
}

void adapt_step(ChainState& s, double target_rate) {
  if (s.frozen) throw std::invalid_argument("adapt_step on a frozen chain");
  if (s.window_proposed > 0) {
    const double rate =
        static_cast<double>(s.window_accepted) / static_cast<double>(s.window_proposed);
    s.step_size *= std::exp(kAdaptGain * (rate - target_rate));
  }
  s.window_accepted = 0;
  s.window_proposed = 0;
}

// ---------------------------------------------------------------------------

MalaEnsemble::MalaEnsemble(const Target& target, const MatrixXd& positions,
                           const VectorXd& step_sizes, const RandomStream& rng)
    : target_(target), x_(positions), sigma_(step_sizes) {
  const Index n = positions.cols();
  if (n < 1) throw std::invalid_argument("MalaEnsemble needs at least one chain");
  if (positions.rows() != target.dim) throw std::invalid_argument("positions have wrong dimension");
  if (step_sizes.size() != n) throw std::invalid_argument("one step size per chain required");
  if (!(step_sizes.array() > 0.0).all()) throw std::invalid_argument("step sizes must be positive");
  streams_.reserve(static_cast<std::size_t>(n));
  for (Index c = 0; c < n; ++c) streams_.push_back(rng.child(static_cast<std::uint64_t>(c)));
  accepted_.assign(static_cast<std::size_t>(n), 0);
  proposed_.assign(static_cast<std::size_t>(n), 0);

  z_ = map_columns(x_, target_.support, true);
  MatrixXd gx;
  target_.evaluate(x_, logp_, &gx);
  pull_back(target_.support, z_, logp_, gx, logp_z_, grad_z_);

  std::vector<Index> good;
  for (Index c = 0; c < n; ++c)
    if (std::isfinite(logp_z_[c]) && finite_column(grad_z_, c) && finite_column(x_, c))
      good.push_back(c);
  if (good.empty())
    throw Error(ErrorKind::sampler_failure,
                "no chain starts at a point with finite log-density (" + std::to_string(n) +
                    " chains)");
  if (static_cast<Index>(good.size()) == n) return;
  for (Index c = 0; c < n; ++c) {
    if (std::isfinite(logp_z_[c]) && finite_column(grad_z_, c) && finite_column(x_, c)) continue;
    auto& s = streams_[static_cast<std::size_t>(c)];
    const Index src = good[static_cast<std::size_t>(s() % good.size())];
    x_.col(c) = x_.col(src);
    z_.col(c) = z_.col(src);
    logp_[c] = logp_[src];
    logp_z_[c] = logp_z_[src];
    grad_z_.col(c) = grad_z_.col(src);
    ++restarts_;
  }
}

void MalaEnsemble::evaluate(const MatrixXd& z, MatrixXd& x, VectorXd& logp_x, VectorXd& logp_z,
                            MatrixXd& grad_z) const {
  x = map_columns(z, target_.support, false);
  MatrixXd gx;
  target_.evaluate(x, logp_x, &gx);
  pull_back(target_.support, z, logp_x, gx, logp_z, grad_z);
}

void MalaEnsemble::step(bool adapt, double target_rate) {
  const Index n = size(), d = x_.rows();
  MatrixXd xi(d, n);
  VectorXd log_u(n);
  for (Index c = 0; c < n; ++c) {
    auto& s = streams_[static_cast<std::size_t>(c)];
    xi.col(c) = s.normal_vector(d);
    log_u[c] = std::log(s.uniform());
  }
  const MatrixXd half_var = (0.5 * sigma_.array().square()).matrix().transpose().replicate(d, 1);
  const MatrixXd zp = z_ + grad_z_.cwiseProduct(half_var) +
                      xi * sigma_.asDiagonal();

  MatrixXd xp, gp;
  VectorXd lpx, lpz;
  evaluate(zp, xp, lpx, lpz, gp);

  for (Index c = 0; c < n; ++c) {
    ++proposed_[static_cast<std::size_t>(c)];
    bool accept = false;
    if (std::isfinite(lpz[c]) && finite_column(gp, c) && finite_column(xp, c)) {
      const double sg = sigma_[c];
      const double log_alpha = lpz[c] - logp_z_[c] +
                               log_proposal(z_.col(c), zp.col(c), gp.col(c), sg) -
                               log_proposal(zp.col(c), z_.col(c), grad_z_.col(c), sg);
      accept = log_u[c] < log_alpha;
    }
    if (accept) {
      ++accepted_[static_cast<std::size_t>(c)];
      x_.col(c) = xp.col(c);
      z_.col(c) = zp.col(c);
      logp_[c] = lpx[c];
      logp_z_[c] = lpz[c];
      grad_z_.col(c) = gp.col(c);
    }
    if (adapt) sigma_[c] *= std::exp(kAdaptGain * ((accept ? 1.0 : 0.0) - target_rate));
  }
}

void MalaEnsemble::run(int steps, bool adapt, double target_rate) {
  if (steps < 0) throw std::invalid_argument("negative step count");
  for (int i = 0; i < steps; ++i) step(adapt, target_rate);
}

double MalaEnsemble::acceptance_rate() const {
  long a = 0, p = 0;
  for (std::size_t c = 0; c < accepted_.size(); ++c) {
    a += accepted_[c];
    p += proposed_[c];
  }
  return p > 0 ? static_cast<double>(a) / static_cast<double>(p) : 0.0;
}

long MalaEnsemble::proposals() const {
  long p = 0;
  for (long v : proposed_) p += v;
  return p;
}

void MalaEnsemble::reset_counters() {
  std::fill(accepted_.begin(), accepted_.end(), 0);
  std::fill(proposed_.begin(), proposed_.end(), 0);
}

// ---------------------------------------------------------------------------

nlohmann::json SamplerDiagnostics::to_json() const {
  nlohmann::json j;
  j["acceptance_rate"] = acceptance_rate;
  j["step_size"] = {{"min", step_size_min}, {"mean", step_size_mean}, {"max", step_size_max}};
  j["ess"] = ess;
  j["resample_count"] = resample_count;
  j["restarts"] = restarts;
  return j;
}

namespace {
void record_steps(SamplerDiagnostics& d, const VectorXd& sigma) {
  d.step_size_min = sigma.minCoeff();
  d.step_size_mean = sigma.mean();
  d.step_size_max = sigma.maxCoeff();
}
}  // namespace

ParticleCloud run_chains(const Target& target, const ParticleCloud& init, int n_steps,
                         int warmup_steps, const RandomStream& rng,
                         SamplerDiagnostics* diagnostics) {
  if (init.size() < 1) throw std::invalid_argument("run_chains needs a non-empty cloud");
  if (n_steps < 0 || warmup_steps < 0) throw std::invalid_argument("negative step count");
  MalaEnsemble ens(target, init.particles, init.step_sizes, rng);
  ens.run(warmup_steps, true);
  if (n_steps > 0) ens.reset_counters();
  ens.run(n_steps, false);
  if (!ens.log_density().array().isFinite().any())
    throw Error(ErrorKind::sampler_failure, "all chains diverged");

  ParticleCloud out(ens.positions());
  out.step_sizes = ens.step_sizes();
  if (diagnostics) {
    diagnostics->acceptance_rate = ens.acceptance_rate();
    diagnostics->restarts = ens.restarts();
    record_steps(*diagnostics, out.step_sizes);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<Index> systematic_resample(const VectorXd& weights, double u) {
  const Index n = weights.size();
  if (n < 1) throw std::invalid_argument("systematic_resample: no weights");
  if (!(u >= 0.0 && u < 1.0)) throw std::invalid_argument("systematic_resample: u not in [0, 1)");
  const double total = weights.sum();
  if (!(total > 0.0) || !std::isfinite(total))
    throw std::invalid_argument("systematic_resample: weights must have a positive finite sum");
  std::vector<Index> idx(static_cast<std::size_t>(n));
  double cumulative = weights[0] / total;
  Index j = 0;
  for (Index k = 0; k < n; ++k) {
    const double point = (static_cast<double>(k) + u) / static_cast<double>(n);
    while (point >= cumulative && j < n - 1) {
      ++j;
      cumulative += weights[j] / total;
    }
    idx[static_cast<std::size_t>(k)] = j;
  }
  return idx;
}

double effective_sample_size(const VectorXd& weights) {
  const double s = weights.sum();
  const double s2 = weights.squaredNorm();
  return s2 > 0.0 ? s * s / s2 : 0.0;
}

double log_sum_exp(const VectorXd& v) {
  if (v.size() == 0) return kNegInf;
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

SmcResult smc_run(const Target& target, const Target& nu0, const ParticleCloud& cloud0,
                  const SmcConfig& cfg, const RandomStream& rng) {
  cloud0.validate();
  const Index n = cloud0.size();
  if (cloud0.dim() != target.dim || nu0.dim != target.dim)
    throw std::invalid_argument("smc_run: dimension mismatch");
  if (cfg.L < 1 || cfg.kernel_steps < 0) throw std::invalid_argument("smc_run: bad L or kernel_steps");
  if (!(cfg.resample_threshold >= 1.0 / static_cast<double>(n) && cfg.resample_threshold < 1.0) &&
      n > 1)
    throw std::invalid_argument("smc_run: resample threshold must be in [1/N, 1)");

  SmcResult result;
  MatrixXd x = cloud0.particles;
  VectorXd sigma = cloud0.step_sizes;
  VectorXd log_w = cloud0.weights.array().log().matrix();
  VectorXd lt, l0;
  target.evaluate(x, lt, nullptr);
  nu0.evaluate(x, l0, nullptr);

  long accepted_moves = 0;
  double accepted_weighted = 0.0;

  for (int l = 1; l <= cfg.L; ++l) {
    const double beta_prev = static_cast<double>(l - 1) / cfg.L;
    const double beta = static_cast<double>(l) / cfg.L;
    const double dbeta = beta - beta_prev;

    VectorXd inc(n);
    for (Index i = 0; i < n; ++i) {
      const double diff = lt[i] - l0[i];
      inc[i] = (std::isfinite(lt[i]) && std::isfinite(l0[i])) ? dbeta * diff : kNegInf;
    }
    const VectorXd updated = log_w + inc;
    const double lse_new = log_sum_exp(updated);
    if (!std::isfinite(lse_new))
      throw Error(ErrorKind::degenerate_bridge,
                  "all SMC weights vanished at stage " + std::to_string(l) + " of " +
                      std::to_string(cfg.L));
    result.log_normalizer_ratio += lse_new - log_sum_exp(log_w);
    log_w = (updated.array() - lse_new).matrix();
    VectorXd w = log_w.array().exp().matrix();
    const double ess = effective_sample_size(w);
    result.diagnostics.ess.push_back(ess);

    if (ess < cfg.resample_threshold * static_cast<double>(n)) {
      RandomStream rs = rng.child(2 * static_cast<std::uint64_t>(l));
      const auto idx = systematic_resample(w, rs.uniform());
      MatrixXd xr(x.rows(), n);
      VectorXd sr(n), ltr(n), l0r(n);
      for (Index k = 0; k < n; ++k) {
        const Index j = idx[static_cast<std::size_t>(k)];
        xr.col(k) = x.col(j);
        sr[k] = sigma[j];
        ltr[k] = lt[j];
        l0r[k] = l0[j];
      }
      x = std::move(xr);
      sigma = std::move(sr);
      lt = std::move(ltr);
      l0 = std::move(l0r);
      log_w.setConstant(-std::log(static_cast<double>(n)));
      ++result.diagnostics.resample_count;
    }

    if (cfg.kernel_steps > 0) {
      const double a = 1.0 - beta, b = beta;
      Target bridge(
          target.dim,
          [&](const MatrixXd& pts, VectorXd& logp, MatrixXd* grad) {
            VectorXd pt, p0;
            MatrixXd gt, g0;
            target.evaluate(pts, pt, grad ? &gt : nullptr);
            if (a > 0.0) nu0.evaluate(pts, p0, grad ? &g0 : nullptr);
            logp = b * pt;
            if (grad) *grad = b * gt;
            if (a > 0.0) {
              logp += a * p0;
              if (grad) *grad += a * g0;
            }
            for (Index i = 0; i < logp.size(); ++i)
              if (std::isnan(logp[i])) logp[i] = kNegInf;
          },
          target.support);
      MalaEnsemble ens(bridge, x, sigma, rng.child(2 * static_cast<std::uint64_t>(l) + 1));
      ens.run(cfg.kernel_steps, cfg.adapt_kernel);
      x = ens.positions();
      sigma = ens.step_sizes();
      accepted_moves += ens.proposals();
      accepted_weighted += ens.acceptance_rate() * static_cast<double>(ens.proposals());
      target.evaluate(x, lt, nullptr);
      nu0.evaluate(x, l0, nullptr);
    }
  }

  result.cloud.particles = std::move(x);
  result.cloud.step_sizes = std::move(sigma);
  VectorXd w = log_w.array().exp().matrix();
  result.cloud.weights = w / w.sum();
  result.diagnostics.acceptance_rate =
      accepted_moves > 0 ? accepted_weighted / static_cast<double>(accepted_moves) : 0.0;
  record_steps(result.diagnostics, result.cloud.step_sizes);
  return result;
}

// ---------------------------------------------------------------------------

ExchangeChains::ExchangeChains(const MatrixXd& theta_in, const VectorXd& x_o,
                               const VectorXd& scale, double aux_step_size)
    : theta(theta_in),
      aux(x_o.replicate(1, theta_in.cols())),
      aux_step(VectorXd::Constant(theta_in.cols(), aux_step_size)),
      proposal_scale(scale.replicate(1, theta_in.cols())),
      accepted(static_cast<std::size_t>(theta_in.cols()), 0),
      proposed(static_cast<std::size_t>(theta_in.cols()), 0) {
  if (scale.size() != theta_in.rows()) throw std::invalid_argument("proposal scale has wrong size");
  if (!(scale.array() > 0.0).all()) throw std::invalid_argument("proposal scales must be positive");
}

double ExchangeChains::acceptance_rate() const {
  long a = 0, p = 0;
  for (std::size_t c = 0; c < accepted.size(); ++c) {
    a += accepted[c];
    p += proposed[c];
  }
  return p > 0 ? static_cast<double>(a) / static_cast<double>(p) : 0.0;
}

void exchange_sweep(const ConditionalEnergy& energy, const Prior& prior, const VectorXd& x_o,
                    ExchangeChains& chains, int inner_steps, const RandomStream& rng, bool adapt) {
  if (inner_steps < 1) throw std::invalid_argument("exchange_sweep needs inner_steps >= 1");
  const Index n = chains.size(), dt = energy.theta_dim(), dx = energy.x_dim();
  if (chains.theta.rows() != dt || chains.aux.rows() != dx || x_o.size() != dx)
    throw std::invalid_argument("exchange_sweep: dimension mismatch");

  MatrixXd proposal(dt, n);
  VectorXd log_u(n), lp_cur(n), lp_prop(n);
  for (Index c = 0; c < n; ++c) {
    RandomStream s = rng.child(static_cast<std::uint64_t>(c));
    proposal.col(c) = chains.theta.col(c) + chains.proposal_scale.col(c).cwiseProduct(s.normal_vector(dt));
    log_u[c] = std::log(s.uniform());
    lp_cur[c] = prior.log_density(chains.theta.col(c));
    lp_prop[c] = prior.log_density(proposal.col(c));
  }

  std::vector<Index> active;
  for (Index c = 0; c < n; ++c)
    if (std::isfinite(lp_prop[c])) active.push_back(c);
  const Index na = static_cast<Index>(active.size());

  std::vector<char> accept(static_cast<std::size_t>(n), 0);
  if (na > 0) {
    MatrixXd theta_p(dt, na), theta_c(dt, na), aux0(dx, na);
    VectorXd steps(na);
    for (Index k = 0; k < na; ++k) {
      const Index c = active[static_cast<std::size_t>(k)];
      theta_p.col(k) = proposal.col(c);
      theta_c.col(k) = chains.theta.col(c);
      aux0.col(k) = chains.aux.col(c);
      steps[k] = chains.aux_step[c];
    }
    Target inner(dx, [&](const MatrixXd& pts, VectorXd& logp, MatrixXd* grad) {
      VectorXd e;
      MatrixXd g;
      energy.evaluate(stack_inputs(pts, theta_p), e, grad ? &g : nullptr);
      logp = -e;
      if (grad) *grad = -g.topRows(dx);
    });
    MalaEnsemble ens(inner, aux0, steps, rng.child(~std::uint64_t{0}));
    ens.run(inner_steps, adapt, kExchangeInnerRate);
    const MatrixXd& x_aux = ens.positions();

    // Four energy terms per chain in one batch.
    MatrixXd inputs(dx + dt, 4 * na);
    inputs.leftCols(na) = stack_inputs(x_o, theta_p);
    inputs.middleCols(na, na) = stack_inputs(x_o, theta_c);
    inputs.middleCols(2 * na, na) = stack_inputs(x_aux, theta_c);
    inputs.rightCols(na) = stack_inputs(x_aux, theta_p);
    VectorXd e;
    energy.evaluate(inputs, e, nullptr);

    for (Index k = 0; k < na; ++k) {
      const Index c = active[static_cast<std::size_t>(k)];
      const double log_r = -e[k] + e[na + k] - e[2 * na + k] + e[3 * na + k] + lp_prop[c] -
                           lp_cur[c];
      accept[static_cast<std::size_t>(c)] = std::isfinite(log_r) && log_u[c] < log_r;
      chains.aux.col(c) = x_aux.col(k);
      chains.aux_step[c] = ens.step_sizes()[k];
    }
  }

  for (Index c = 0; c < n; ++c) {
    const bool a = accept[static_cast<std::size_t>(c)] != 0;
    ++chains.proposed[static_cast<std::size_t>(c)];
    if (a) {
      chains.theta.col(c) = proposal.col(c);
      ++chains.accepted[static_cast<std::size_t>(c)];
    }
    if (adapt)
      chains.proposal_scale.col(c) *= std::exp(kAdaptGain * ((a ? 1.0 : 0.0) - kExchangeTargetRate));
  }
}

VectorXd exchange_step(const ConditionalEnergy& energy, const Prior& prior, const VectorXd& x_o,
                       ExchangeChains& chain, int inner_steps, const RandomStream& rng, bool adapt) {
  if (chain.size() != 1) throw std::invalid_argument("exchange_step expects a single chain");
  exchange_sweep(energy, prior, x_o, chain, inner_steps, rng, adapt);
  return chain.theta.col(0);
}

}  // namespace unle
