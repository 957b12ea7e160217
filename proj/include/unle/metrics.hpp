#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "unle/rng.hpp"

namespace unle {

struct MetricReport {
  std::string metric;
  double value = 0.0;
  Eigen::Index n_a = 0;
  Eigen::Index n_b = 0;
  std::vector<double> folds;    // c2st only
  double standard_error = 0.0;  // energy distance only
  std::uint64_t seed = 0;
  nlohmann::json to_json() const;
};

struct C2stConfig {
  int folds = 5;
  /// Hidden width is width_factor * dim, two hidden layers.
  int width_factor = 10;
  int batch_size = 200;
  int max_epochs = 300;
  double learning_rate = 1e-3;
  /// Stop when the training loss has not improved by `tol` for `patience` epochs.
  double tol = 1e-4;
  int patience = 10;
};

/// Cross-validated accuracy of a classifier trained to tell the columns of
/// `a` from the columns of `b` (0.5 when indistinguishable).
MetricReport c2st(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const RandomStream& rng,
                  const C2stConfig& cfg = {});

/// U-statistic estimate of 2E|A-B| - E|A-A'| - E|B-B'|. For equal sample
/// sizes the matched pairs (a_i, b_i) of the canonically sorted samples are
/// left out of the cross term, so a == b gives exactly zero and the result
/// does not depend on sample order; leaving out rank-matched pairs adds a
/// bias of order 1/n. Unequal sizes use the standard unbiased two-sample form.
MetricReport energy_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// q-quantile of energy_distance over random relabelings of the pooled samples.
double energy_distance_null_quantile(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                     int permutations, double q, const RandomStream& rng);

/// Regular 2-D grid of cell centers.
struct Grid2D {
  double x_lo = -1.0, x_hi = 1.0, y_lo = -1.0, y_hi = 1.0;
  int nx = 100, ny = 100;
  Eigen::MatrixXd centers() const;  // 2 x (nx * ny), x varies fastest
};

/// Cell probabilities proportional to exp(logp) at the cell centers.
Eigen::VectorXd grid_probabilities(const std::function<Eigen::VectorXd(const Eigen::MatrixXd&)>& logp,
                                   const Grid2D& grid);
/// Gaussian-kernel smoothing of cell probabilities (renormalized on the grid).
Eigen::VectorXd smooth_grid(const Eigen::VectorXd& probs, const Grid2D& grid, double bandwidth);
/// Gaussian kernel density estimate of 2-D samples as grid cell probabilities.
Eigen::VectorXd kde_grid(const Eigen::MatrixXd& samples, const Grid2D& grid, double bandwidth);
double total_variation(const Eigen::VectorXd& p, const Eigen::VectorXd& q);

}  // namespace unle
