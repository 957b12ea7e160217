#include "unle/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "unle/csv.hpp"
#include "unle/errors.hpp"
#include "unle/samplers.hpp"

namespace unle {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kLog2Pi = 1.8378770664093453;

double normal_logpdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * kLog2Pi;
}

double log_add(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// FNV-1a; stable across platforms, unlike std::hash.
std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

// ---------------------------------------------------------------------------

BoxUniformPrior::BoxUniformPrior(VectorXd lower, VectorXd upper)
    : lower_(std::move(lower)), upper_(std::move(upper)) {
  if (lower_.size() != upper_.size() || lower_.size() == 0)
    throw std::invalid_argument("box prior bounds differ in size");
  if (!(lower_.array() < upper_.array()).all() || !lower_.allFinite() || !upper_.allFinite())
    throw std::invalid_argument("box prior needs finite lower < upper");
  log_volume_ = (upper_ - lower_).array().log().sum();
}

VectorXd BoxUniformPrior::sample(RandomStream& rng) const {
  VectorXd t(dim());
  for (Index i = 0; i < dim(); ++i) t[i] = lower_[i] + (upper_[i] - lower_[i]) * rng.uniform();
  return t;
}

double BoxUniformPrior::log_density(const VectorXd& theta) const {
  if (theta.size() != dim()) throw std::invalid_argument("theta has wrong dimension");
  for (Index i = 0; i < dim(); ++i)
    if (!(theta[i] >= lower_[i] && theta[i] <= upper_[i])) return -kInf;
  return -log_volume_;
}

VectorXd BoxUniformPrior::grad_log_density(const VectorXd& theta) const {
  if (theta.size() != dim()) throw std::invalid_argument("theta has wrong dimension");
  return VectorXd::Zero(dim());
}

Support BoxUniformPrior::support() const { return Support::box(lower_, upper_); }

DiagonalNormalPrior::DiagonalNormalPrior(VectorXd mean, VectorXd stddev)
    : mean_(std::move(mean)), stddev_(std::move(stddev)) {
  if (mean_.size() != stddev_.size() || mean_.size() == 0)
    throw std::invalid_argument("normal prior parameters differ in size");
  if (!(stddev_.array() > 0.0).all()) throw std::invalid_argument("prior stddev must be positive");
}

VectorXd DiagonalNormalPrior::sample(RandomStream& rng) const {
  return mean_ + stddev_.cwiseProduct(rng.normal_vector(dim()));
}

double DiagonalNormalPrior::log_density(const VectorXd& theta) const {
  if (theta.size() != dim()) throw std::invalid_argument("theta has wrong dimension");
  double s = 0.0;
  for (Index i = 0; i < dim(); ++i) s += normal_logpdf(theta[i], mean_[i], stddev_[i]);
  return s;
}

VectorXd DiagonalNormalPrior::grad_log_density(const VectorXd& theta) const {
  if (theta.size() != dim()) throw std::invalid_argument("theta has wrong dimension");
  return -((theta - mean_).array() / stddev_.array().square()).matrix();
}

// ---------------------------------------------------------------------------

std::optional<VectorXd> Task::simulate(const VectorXd& theta, RandomStream& rng) const {
  if (theta.size() != theta_dim()) throw std::invalid_argument("theta has wrong dimension");
  if (!theta.allFinite() || !prior().support().contains(theta))
    throw std::invalid_argument("theta outside the prior support");
  VectorXd x = simulate_unchecked(theta, rng);
  if (x.size() != x_dim() || !x.allFinite()) return std::nullopt;
  return x;
}

double Task::true_loglik(const VectorXd& x, const VectorXd& theta) const {
  if (!has_true_loglik())
    throw Error(ErrorKind::unsupported, "task '" + name() + "' has no tractable likelihood");
  if (x.size() != x_dim() || theta.size() != theta_dim())
    throw std::invalid_argument("true_loglik: dimension mismatch");
  return loglik(x, theta);
}

double Task::loglik(const VectorXd&, const VectorXd&) const {
  throw Error(ErrorKind::unsupported, "task '" + name() + "' has no tractable likelihood");
}

VectorXd Task::true_loglik_grad(const VectorXd& x, const VectorXd& theta) const {
  VectorXd g(theta.size());
  VectorXd t = theta;
  for (Index i = 0; i < theta.size(); ++i) {
    const double h = 1e-5 * std::max(1.0, std::abs(theta[i]));
    t[i] = theta[i] + h;
    const double up = true_loglik(x, t);
    t[i] = theta[i] - h;
    const double down = true_loglik(x, t);
    t[i] = theta[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

VectorXd Task::true_theta(int index) const {
  if (index < 0) throw std::invalid_argument("observation index must be non-negative");
  RandomStream rng = RandomStream(name_hash(name())).child(static_cast<std::uint64_t>(index));
  return prior().sample(rng);
}

VectorXd Task::observation(int index) const {
  const VectorXd theta = true_theta(index);
  RandomStream rng = RandomStream(name_hash(name()) ^ 0x0b5e7a7104ULL)
                         .child(static_cast<std::uint64_t>(index));
  for (int attempt = 0; attempt < 100; ++attempt) {
    if (auto x = simulate(theta, rng)) return *x;
  }
  throw Error(ErrorKind::task_unsuitable, "could not simulate an observation for '" + name() + "'");
}

// ---------------------------------------------------------------------------

namespace {

class TwoMoons final : public Task {
 public:
  TwoMoons() : prior_(VectorXd::Constant(2, -1.0), VectorXd::Constant(2, 1.0)) {}
  std::string name() const override { return "two_moons"; }
  Index theta_dim() const override { return 2; }
  Index x_dim() const override { return 2; }
  const Prior& prior() const override { return prior_; }

 protected:
  static VectorXd shift(const VectorXd& theta) {
    VectorXd s(2);
    s << -std::abs(theta[0] + theta[1]) / std::numbers::sqrt2 + 0.25,
        (-theta[0] + theta[1]) / std::numbers::sqrt2;
    return s;
  }
  VectorXd simulate_unchecked(const VectorXd& theta, RandomStream& rng) const override {
    const double a = std::numbers::pi * (rng.uniform() - 0.5);
    const double r = 0.1 + 0.01 * rng.normal();
    VectorXd x(2);
    x << r * std::cos(a), r * std::sin(a);
    return x + shift(theta);
  }
  double loglik(const VectorXd& x, const VectorXd& theta) const override {
    const VectorXd u = x - shift(theta);
    const double r = u.norm();
    if (r == 0.0) return -kInf;
    // Polar change of variables: a uniform on (-pi/2, pi/2), r ~ N(0.1, 0.01^2).
    const double signed_r = u[0] >= 0.0 ? r : -r;
    return normal_logpdf(signed_r, 0.1, 0.01) - std::log(std::numbers::pi * r);
  }

 private:
  BoxUniformPrior prior_;
};

class Slcp final : public Task {
 public:
  Slcp() : prior_(VectorXd::Constant(5, -3.0), VectorXd::Constant(5, 3.0)) {}
  std::string name() const override { return "slcp"; }
  Index theta_dim() const override { return 5; }
  Index x_dim() const override { return 8; }
  const Prior& prior() const override { return prior_; }

 protected:
  struct Gauss {
    Eigen::Vector2d mean;
    Eigen::Matrix2d cov;
  };
  static Gauss params(const VectorXd& t) {
    const double s1 = t[2] * t[2], s2 = t[3] * t[3], rho = std::tanh(t[4]);
    Gauss g;
    g.mean << t[0], t[1];
    g.cov << s1 * s1, rho * s1 * s2, rho * s1 * s2, s2 * s2;
    return g;
  }
  VectorXd simulate_unchecked(const VectorXd& theta, RandomStream& rng) const override {
    const Gauss g = params(theta);
    const double s1 = std::sqrt(g.cov(0, 0)), s2 = std::sqrt(g.cov(1, 1));
    const double rho = std::tanh(theta[4]);
    VectorXd x(8);
    for (int k = 0; k < 4; ++k) {
      const double z1 = rng.normal(), z2 = rng.normal();
      x[2 * k] = g.mean[0] + s1 * z1;
      x[2 * k + 1] = g.mean[1] + s2 * (rho * z1 + std::sqrt(1.0 - rho * rho) * z2);
    }
    return x;
  }
  double loglik(const VectorXd& x, const VectorXd& theta) const override {
    const Gauss g = params(theta);
    const double det = g.cov.determinant();
    if (!(det > 0.0) || !std::isfinite(det)) return -kInf;
    const Eigen::Matrix2d inv = g.cov.inverse();
    double s = 0.0;
    for (int k = 0; k < 4; ++k) {
      const Eigen::Vector2d d = x.segment<2>(2 * k) - g.mean;
      s += -0.5 * d.dot(inv * d) - 0.5 * std::log(det) - kLog2Pi;
    }
    return s;
  }

 private:
  BoxUniformPrior prior_;
};

class GaussianLinearUniform final : public Task {
 public:
  GaussianLinearUniform() : prior_(VectorXd::Constant(10, -1.0), VectorXd::Constant(10, 1.0)) {}
  std::string name() const override { return "gaussian_linear_uniform"; }
  Index theta_dim() const override { return 10; }
  Index x_dim() const override { return 10; }
  const Prior& prior() const override { return prior_; }
  VectorXd true_loglik_grad(const VectorXd& x, const VectorXd& theta) const override {
    return (x - theta) / (kSd * kSd);
  }

 protected:
  static constexpr double kSd = 0.1;
  VectorXd simulate_unchecked(const VectorXd& theta, RandomStream& rng) const override {
    return theta + kSd * rng.normal_vector(10);
  }
  double loglik(const VectorXd& x, const VectorXd& theta) const override {
    double s = 0.0;
    for (Index i = 0; i < 10; ++i) s += normal_logpdf(x[i], theta[i], kSd);
    return s;
  }

 private:
  BoxUniformPrior prior_;
};

// Predator-prey ODE integrated with fixed-step RK4; both populations observed
// at t = 4, 8, ..., 20 with multiplicative log-normal noise.
class LotkaVolterra final : public Task {
 public:
  LotkaVolterra()
      : prior_((VectorXd(4) << -0.125, -3.0, -0.125, -3.0).finished(), VectorXd::Constant(4, 0.5)) {}
  std::string name() const override { return "lotka_volterra"; }
  Index theta_dim() const override { return 4; }
  Index x_dim() const override { return 10; }
  const Prior& prior() const override { return prior_; }

 protected:
  static constexpr double kNoise = 0.1;
  static constexpr double kDt = 0.02;
  static constexpr int kStepsPerObs = 200;  // 4 time units

  // Log populations at the five observation times; nullopt on blow-up.
  static std::optional<VectorXd> trajectory(const VectorXd& theta) {
    const double alpha = std::exp(theta[0]), beta = std::exp(theta[1]);
    const double gamma = std::exp(theta[2]), delta = std::exp(theta[3]);
    auto f = [&](const Eigen::Vector2d& s) {
      return Eigen::Vector2d(alpha * s[0] - beta * s[0] * s[1],
                             delta * s[0] * s[1] - gamma * s[1]);
    };
    Eigen::Vector2d s(30.0, 1.0);
    VectorXd out(10);
    for (int obs = 0; obs < 5; ++obs) {
      for (int k = 0; k < kStepsPerObs; ++k) {
        const Eigen::Vector2d k1 = f(s);
        const Eigen::Vector2d k2 = f(s + 0.5 * kDt * k1);
        const Eigen::Vector2d k3 = f(s + 0.5 * kDt * k2);
        const Eigen::Vector2d k4 = f(s + kDt * k3);
        s += kDt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!s.allFinite() || s.minCoeff() <= 0.0 || s.maxCoeff() > 1e8) return std::nullopt;
      }
      out[2 * obs] = std::log(s[0]);
      out[2 * obs + 1] = std::log(s[1]);
    }
    return out;
  }
  VectorXd simulate_unchecked(const VectorXd& theta, RandomStream& rng) const override {
    const auto log_pop = trajectory(theta);
    if (!log_pop) return VectorXd::Constant(10, std::numeric_limits<double>::quiet_NaN());
    return (log_pop->array() + kNoise * rng.normal_vector(10).array()).exp().matrix();
  }
  double loglik(const VectorXd& x, const VectorXd& theta) const override {
    if (!(x.array() > 0.0).all()) return -kInf;
    const auto log_pop = trajectory(theta);
    if (!log_pop) return -kInf;
    double s = 0.0;
    for (Index i = 0; i < 10; ++i) {
      const double lx = std::log(x[i]);
      s += normal_logpdf(lx, (*log_pop)[i], kNoise) - lx;
    }
    return s;
  }

 private:
  DiagonalNormalPrior prior_;
};

// One-dimensional toy with a bimodal likelihood:
// x | theta ~ 1/2 N(theta - 2, 0.5^2) + 1/2 N(theta + 2, 0.5^2), theta ~ N(0, 1).
class Bimodal final : public Task {
 public:
  Bimodal() : prior_(VectorXd::Zero(1), VectorXd::Ones(1)) {}
  std::string name() const override { return "bimodal"; }
  Index theta_dim() const override { return 1; }
  Index x_dim() const override { return 1; }
  const Prior& prior() const override { return prior_; }

  VectorXd true_theta(int index) const override {
    return index == 0 ? VectorXd::Zero(1) : Task::true_theta(index);
  }
  // x_o = 0 puts the posterior modes symmetrically at +-1.6.
  VectorXd observation(int index) const override {
    return index == 0 ? VectorXd::Zero(1) : Task::observation(index);
  }
  VectorXd true_loglik_grad(const VectorXd& x, const VectorXd& theta) const override {
    const double lm = normal_logpdf(x[0], theta[0] - kOffset, kSd);
    const double lp = normal_logpdf(x[0], theta[0] + kOffset, kSd);
    const double m = std::max(lm, lp);
    const double wm = std::exp(lm - m), wp = std::exp(lp - m);
    const double gm = (x[0] - theta[0] + kOffset) / (kSd * kSd);
    const double gp = (x[0] - theta[0] - kOffset) / (kSd * kSd);
    return VectorXd::Constant(1, (wm * gm + wp * gp) / (wm + wp));
  }

 protected:
  static constexpr double kOffset = 2.0;
  static constexpr double kSd = 0.5;
  VectorXd simulate_unchecked(const VectorXd& theta, RandomStream& rng) const override {
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    return VectorXd::Constant(1, theta[0] + sign * kOffset + kSd * rng.normal());
  }
  double loglik(const VectorXd& x, const VectorXd& theta) const override {
    return std::log(0.5) + log_add(normal_logpdf(x[0], theta[0] - kOffset, kSd),
                                   normal_logpdf(x[0], theta[0] + kOffset, kSd));
  }

 private:
  DiagonalNormalPrior prior_;
};

}  // namespace

std::unique_ptr<Task> make_task(std::string_view name) {
  if (name == "two_moons") return std::make_unique<TwoMoons>();
  if (name == "slcp") return std::make_unique<Slcp>();
  if (name == "gaussian_linear_uniform") return std::make_unique<GaussianLinearUniform>();
  if (name == "lotka_volterra") return std::make_unique<LotkaVolterra>();
  if (name == "bimodal") return std::make_unique<Bimodal>();
  throw std::invalid_argument("unknown task '" + std::string(name) + "'");
}

std::vector<std::string> task_names() {
  return {"two_moons", "slcp", "gaussian_linear_uniform", "lotka_volterra", "bimodal"};
}

// ---------------------------------------------------------------------------

void Dataset::add(const VectorXd& theta, const VectorXd& x, int round) {
  if (theta.size() != theta_dim || x.size() != x_dim)
    throw std::invalid_argument("dataset entry has wrong dimension");
  if (!theta.allFinite() || !x.allFinite())
    throw std::invalid_argument("dataset entries must be finite");
  if (round < 0 || (!rounds.empty() && round < rounds.back()))
    throw std::invalid_argument("dataset round indices must be non-decreasing");
  thetas.push_back(theta);
  xs.push_back(x);
  rounds.push_back(round);
}

void Dataset::append(const Dataset& other) {
  if (other.theta_dim != theta_dim || other.x_dim != x_dim)
    throw std::invalid_argument("datasets differ in dimension");
  for (std::size_t i = 0; i < other.size(); ++i) add(other.thetas[i], other.xs[i], other.rounds[i]);
}

MatrixXd Dataset::theta_matrix() const {
  MatrixXd m(theta_dim, static_cast<Index>(size()));
  for (std::size_t i = 0; i < size(); ++i) m.col(static_cast<Index>(i)) = thetas[i];
  return m;
}

MatrixXd Dataset::x_matrix() const {
  MatrixXd m(x_dim, static_cast<Index>(size()));
  for (std::size_t i = 0; i < size(); ++i) m.col(static_cast<Index>(i)) = xs[i];
  return m;
}

MatrixXd Dataset::joint_matrix() const {
  MatrixXd m(x_dim + theta_dim, static_cast<Index>(size()));
  m.topRows(x_dim) = x_matrix();
  m.bottomRows(theta_dim) = theta_matrix();
  return m;
}

SimulationReport simulate_batch(const Task& task, const MatrixXd& thetas, int round,
                                const RandomStream& rng) {
  const Index n = thetas.cols();
  std::vector<std::optional<VectorXd>> out(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic, 16)
  for (Index i = 0; i < n; ++i) {
    RandomStream s = rng.child(static_cast<std::uint64_t>(i));
    out[static_cast<std::size_t>(i)] = task.simulate(thetas.col(i), s);
  }
  SimulationReport report;
  report.data = Dataset(task.theta_dim(), task.x_dim());
  report.attempts = static_cast<std::size_t>(n);
  for (Index i = 0; i < n; ++i) {
    const auto& x = out[static_cast<std::size_t>(i)];
    if (x)
      report.data.add(thetas.col(i), *x, round);
    else
      ++report.invalid;
  }
  return report;
}

// ---------------------------------------------------------------------------

void write_dataset_csv(std::ostream& out, const Dataset& data) {
  std::vector<std::string> header{"round"};
  for (const auto& h : csv::numbered("theta_", data.theta_dim)) header.push_back(h);
  for (const auto& h : csv::numbered("x_", data.x_dim)) header.push_back(h);
  csv::write_row(out, header);
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::vector<std::string> row{std::to_string(data.rounds[i])};
    for (Index k = 0; k < data.theta_dim; ++k) row.push_back(csv::format_double(data.thetas[i][k]));
    for (Index k = 0; k < data.x_dim; ++k) row.push_back(csv::format_double(data.xs[i][k]));
    csv::write_row(out, row);
  }
}

Dataset read_dataset_csv(std::istream& in) {
  const csv::Table t = csv::read(in);
  Index dt = 0, dx = 0;
  for (const auto& h : t.header) {
    if (h.rfind("theta_", 0) == 0) ++dt;
    if (h.rfind("x_", 0) == 0) ++dx;
  }
  const std::size_t round_col = t.column("round");
  std::vector<std::size_t> tcols, xcols;
  for (Index k = 0; k < dt; ++k) tcols.push_back(t.column("theta_" + std::to_string(k)));
  for (Index k = 0; k < dx; ++k) xcols.push_back(t.column("x_" + std::to_string(k)));

  Dataset d(dt, dx);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::size_t line = r + 2;
    VectorXd theta(dt), x(dx);
    for (Index k = 0; k < dt; ++k)
      theta[k] = csv::parse_double(row[tcols[static_cast<std::size_t>(k)]], line);
    for (Index k = 0; k < dx; ++k)
      x[k] = csv::parse_double(row[xcols[static_cast<std::size_t>(k)]], line);
    const double round = csv::parse_double(row[round_col], line);
    if (round != std::floor(round) || round < 0)
      throw Error(ErrorKind::parse_error, "line " + std::to_string(line) + ": bad round index");
    try {
      d.add(theta, x, static_cast<int>(round));
    } catch (const std::invalid_argument& e) {
      throw Error(ErrorKind::parse_error, "line " + std::to_string(line) + ": " + e.what());
    }
  }
  return d;
}

void write_samples_csv(std::ostream& out, const MatrixXd& samples) {
  csv::write_columns(out, csv::numbered("theta_", samples.rows()), samples);
}

MatrixXd read_samples_csv(std::istream& in) {
  const csv::Table t = csv::read(in);
  const Index d = static_cast<Index>(t.header.size());
  MatrixXd m(d, static_cast<Index>(t.rows.size()));
  std::vector<std::size_t> cols;
  for (Index k = 0; k < d; ++k) cols.push_back(t.column("theta_" + std::to_string(k)));
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    for (Index k = 0; k < d; ++k)
      m(k, static_cast<Index>(r)) =
          csv::parse_double(t.rows[r][cols[static_cast<std::size_t>(k)]], r + 2);
  return m;
}

// ---------------------------------------------------------------------------

nlohmann::json ReferenceDiagnostics::to_json() const {
  nlohmann::json j;
  j["acceptance_rate"] = acceptance_rate;
  j["max_split_rhat"] = std::isfinite(max_split_rhat) ? nlohmann::json(max_split_rhat) : nullptr;
  j["retries"] = retries;
  j["chains"] = chains;
  return j;
}

namespace {

// Split-chain potential scale reduction, maximized over coordinates.
// draws[c] is a (dim x T) matrix for chain c.
double max_split_rhat(const std::vector<MatrixXd>& draws) {
  if (draws.empty() || draws[0].cols() < 4) return std::numeric_limits<double>::quiet_NaN();
  const Index half = draws[0].cols() / 2, d = draws[0].rows();
  const Index m = 2 * static_cast<Index>(draws.size());
  double worst = 0.0;
  for (Index k = 0; k < d; ++k) {
    VectorXd means(m), vars(m);
    Index j = 0;
    for (const auto& ch : draws) {
      for (int part = 0; part < 2; ++part) {
        const Eigen::ArrayXd seg = ch.row(k).segment(part * half, half).transpose().array();
        means[j] = seg.mean();
        vars[j] = (seg - means[j]).square().sum() / static_cast<double>(half - 1);
        ++j;
      }
    }
    const double w = vars.mean();
    const double b = static_cast<double>(half) * (means.array() - means.mean()).square().sum() /
                     static_cast<double>(m - 1);
    const double var_plus = (static_cast<double>(half - 1) / half) * w + b / half;
    const double r = w > 0.0 ? std::sqrt(var_plus / w) : 1.0;
    worst = std::max(worst, r);
  }
  return worst;
}

}  // namespace

MatrixXd reference_posterior(const Task& task, const VectorXd& x_o, int n, const RandomStream& rng,
                             const ReferenceConfig& cfg, ReferenceDiagnostics* diagnostics) {
  if (n < 0) throw std::invalid_argument("reference_posterior: negative sample count");
  if (x_o.size() != task.x_dim()) throw std::invalid_argument("x_o has wrong dimension");
  if (!task.has_true_loglik())
    throw Error(ErrorKind::unsupported, "task '" + task.name() + "' has no tractable likelihood");
  if (cfg.chains < 1 || cfg.warmup < 0 || cfg.thin < 1 || cfg.candidates < 1)
    throw std::invalid_argument("reference_posterior: bad configuration");
  const Index d = task.theta_dim();
  if (n == 0) return MatrixXd(d, 0);

  const Prior& prior = task.prior();
  auto log_post = [&](const VectorXd& theta) {
    const double lp = prior.log_density(theta);
    if (!std::isfinite(lp)) return -kInf;
    const double ll = task.true_loglik(x_o, theta);
    return std::isfinite(ll) ? lp + ll : -kInf;
  };

  // Starting points: importance resampling of prior candidates by likelihood.
  MatrixXd starts;
  int retries = 0;
  for (;; ++retries) {
    if (retries > cfg.max_retries)
      throw Error(ErrorKind::initialization_failure,
                  "no candidate with finite posterior density after " + std::to_string(retries) +
                      " attempts");
    const RandomStream cand_rng = rng.child(1000 + static_cast<std::uint64_t>(retries));
    MatrixXd cand(d, cfg.candidates);
    VectorXd logw(cfg.candidates);
#pragma omp parallel for schedule(dynamic, 64)
    for (int i = 0; i < cfg.candidates; ++i) {
      RandomStream s = cand_rng.child(static_cast<std::uint64_t>(i));
      cand.col(i) = prior.sample(s);
      const double lp = log_post(cand.col(i));
      logw[i] = std::isfinite(lp) ? lp - prior.log_density(cand.col(i)) : -kInf;
    }
    const double lse = log_sum_exp(logw);
    if (!std::isfinite(lse)) continue;
    const VectorXd w = (logw.array() - lse).exp().matrix();
    RandomStream pick = cand_rng.child(~std::uint64_t{0});
    const double u = pick.uniform();
    std::vector<Index> idx;
    double cumulative = w[0];
    Index j = 0;
    for (int c = 0; c < cfg.chains; ++c) {
      const double point = (c + u) / cfg.chains;
      while (point >= cumulative && j < cfg.candidates - 1) cumulative += w[++j];
      idx.push_back(j);
    }
    starts.resize(d, cfg.chains);
    for (int c = 0; c < cfg.chains; ++c) starts.col(c) = cand.col(idx[static_cast<std::size_t>(c)]);
    break;
  }

  Target target(
      d,
      [&](const MatrixXd& pts, VectorXd& logp, MatrixXd* grad) {
        logp.resize(pts.cols());
        if (grad) grad->resize(d, pts.cols());
#pragma omp parallel for schedule(dynamic, 16)
        for (Index c = 0; c < pts.cols(); ++c) {
          const VectorXd t = pts.col(c);
          logp[c] = log_post(t);
          if (grad) {
            if (std::isfinite(logp[c]))
              grad->col(c) = prior.grad_log_density(t) + task.true_loglik_grad(x_o, t);
            else
              grad->col(c).setConstant(std::numeric_limits<double>::quiet_NaN());
          }
        }
      },
      prior.support());

  MalaEnsemble ens(target, starts, VectorXd::Constant(cfg.chains, 0.1), rng.child(1));
  ens.run(cfg.warmup, true);
  ens.reset_counters();

  const int per_chain = std::max(4, (n + cfg.chains - 1) / cfg.chains);
  std::vector<MatrixXd> draws(static_cast<std::size_t>(cfg.chains), MatrixXd(d, per_chain));
  for (int k = 0; k < per_chain; ++k) {
    ens.run(cfg.thin, false);
    for (int c = 0; c < cfg.chains; ++c)
      draws[static_cast<std::size_t>(c)].col(k) = ens.positions().col(c);
  }

  MatrixXd out(d, n);
  for (int i = 0; i < n; ++i)
    out.col(i) = draws[static_cast<std::size_t>(i % cfg.chains)].col(i / cfg.chains);

  if (diagnostics) {
    diagnostics->acceptance_rate = ens.acceptance_rate();
    diagnostics->max_split_rhat = max_split_rhat(draws);
    diagnostics->retries = retries;
    diagnostics->chains = cfg.chains;
  }
  return out;
}

}  // namespace unle
