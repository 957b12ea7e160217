#pragma once

#include <Eigen/Dense>

namespace unle {

/// Per-coordinate support: either the whole real line (both bounds infinite)
/// or a finite interval. Bounded coordinates are mapped to the real line with
/// x = lower + width * sigmoid(z) before any gradient-based move.
struct Support {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  static Support unbounded(Eigen::Index dim);
  static Support box(Eigen::VectorXd lower, Eigen::VectorXd upper);
  /// [a; b] stacked.
  static Support concat(const Support& a, const Support& b);

  Eigen::Index dim() const { return lower.size(); }
  bool bounded(Eigen::Index i) const;
  bool any_bounded() const;
  bool contains(const Eigen::VectorXd& x) const;

  Eigen::VectorXd to_unconstrained(const Eigen::VectorXd& x) const;
  Eigen::VectorXd to_constrained(const Eigen::VectorXd& z) const;
  /// log |dx/dz|
  double log_jacobian(const Eigen::VectorXd& z) const;
  /// Gradient of log p(x(z)) + log |dx/dz| w.r.t. z, given grad_x log p.
  Eigen::VectorXd pullback_grad(const Eigen::VectorXd& z, const Eigen::VectorXd& grad_x) const;
};

}  // namespace unle
