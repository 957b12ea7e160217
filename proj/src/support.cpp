#include "unle/support.hpp"

#include <cmath>
#include <algorithm>
#include <limits>
#include <stdexcept>

namespace unle {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace

Support Support::unbounded(Eigen::Index dim) {
  return Support{Eigen::VectorXd::Constant(dim, -kInf), Eigen::VectorXd::Constant(dim, kInf)};
}

Support Support::box(Eigen::VectorXd lower, Eigen::VectorXd upper) {
  if (lower.size() != upper.size()) throw std::invalid_argument("box bounds differ in size");
  for (Eigen::Index i = 0; i < lower.size(); ++i) {
    const bool lo_inf = std::isinf(lower[i]), hi_inf = std::isinf(upper[i]);
    if (lo_inf != hi_inf) throw std::invalid_argument("half-bounded coordinates are not supported");
    if (!lo_inf && !(lower[i] < upper[i])) throw std::invalid_argument("empty box coordinate");
  }
  return Support{std::move(lower), std::move(upper)};
}

Support Support::concat(const Support& a, const Support& b) {
  Support s;
  s.lower.resize(a.dim() + b.dim());
  s.upper.resize(a.dim() + b.dim());
  s.lower << a.lower, b.lower;
  s.upper << a.upper, b.upper;
  return s;
}

bool Support::bounded(Eigen::Index i) const { return std::isfinite(lower[i]); }

bool Support::any_bounded() const {
  for (Eigen::Index i = 0; i < dim(); ++i)
    if (bounded(i)) return true;
  return false;
}

bool Support::contains(const Eigen::VectorXd& x) const {
  if (x.size() != dim()) return false;
  for (Eigen::Index i = 0; i < dim(); ++i)
    if (!(x[i] >= lower[i] && x[i] <= upper[i])) return false;
  return true;
}

Eigen::VectorXd Support::to_unconstrained(const Eigen::VectorXd& x) const {
  Eigen::VectorXd z = x;
  for (Eigen::Index i = 0; i < dim(); ++i) {
    if (!bounded(i)) continue;
    double u = (x[i] - lower[i]) / (upper[i] - lower[i]);
    u = std::clamp(u, 1e-12, 1.0 - 1e-12);
    z[i] = std::log(u) - std::log1p(-u);
  }
  return z;
}

Eigen::VectorXd Support::to_constrained(const Eigen::VectorXd& z) const {
  Eigen::VectorXd x = z;
  for (Eigen::Index i = 0; i < dim(); ++i)
    if (bounded(i)) x[i] = lower[i] + (upper[i] - lower[i]) * sigmoid(z[i]);
  return x;
}

double Support::log_jacobian(const Eigen::VectorXd& z) const {
  double s = 0.0;
  for (Eigen::Index i = 0; i < dim(); ++i)
    if (bounded(i)) s += std::log(upper[i] - lower[i]) - softplus(-z[i]) - softplus(z[i]);
  return s;
}

Eigen::VectorXd Support::pullback_grad(const Eigen::VectorXd& z,
                                       const Eigen::VectorXd& grad_x) const {
  Eigen::VectorXd g = grad_x;
  for (Eigen::Index i = 0; i < dim(); ++i) {
    if (!bounded(i)) continue;
    const double s = sigmoid(z[i]);
    g[i] = grad_x[i] * (upper[i] - lower[i]) * s * (1.0 - s) + (1.0 - 2.0 * s);
  }
  return g;
}

}  // namespace unle
