#pragma once

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "unle/rng.hpp"
#include "unle/support.hpp"

namespace unle {

class Prior {
 public:
  virtual ~Prior() = default;
  virtual Eigen::Index dim() const = 0;
  virtual Eigen::VectorXd sample(RandomStream& rng) const = 0;
  /// Exact log-density; -inf outside the support.
  virtual double log_density(const Eigen::VectorXd& theta) const = 0;
  virtual Eigen::VectorXd grad_log_density(const Eigen::VectorXd& theta) const = 0;
  virtual Support support() const = 0;
};

class BoxUniformPrior final : public Prior {
 public:
  BoxUniformPrior(Eigen::VectorXd lower, Eigen::VectorXd upper);
  Eigen::Index dim() const override { return lower_.size(); }
  Eigen::VectorXd sample(RandomStream& rng) const override;
  double log_density(const Eigen::VectorXd& theta) const override;
  Eigen::VectorXd grad_log_density(const Eigen::VectorXd& theta) const override;
  Support support() const override;

 private:
  Eigen::VectorXd lower_, upper_;
  double log_volume_;
};

class DiagonalNormalPrior final : public Prior {
 public:
  DiagonalNormalPrior(Eigen::VectorXd mean, Eigen::VectorXd stddev);
  Eigen::Index dim() const override { return mean_.size(); }
  Eigen::VectorXd sample(RandomStream& rng) const override;
  double log_density(const Eigen::VectorXd& theta) const override;
  Eigen::VectorXd grad_log_density(const Eigen::VectorXd& theta) const override;
  Support support() const override { return Support::unbounded(dim()); }

 private:
  Eigen::VectorXd mean_, stddev_;
};

/// A simulator with its prior and (when tractable) its exact likelihood.
class Task {
 public:
  virtual ~Task() = default;

  virtual std::string name() const = 0;
  virtual Eigen::Index theta_dim() const = 0;
  virtual Eigen::Index x_dim() const = 0;
  virtual const Prior& prior() const = 0;

  /// One draw x ~ G(theta). Returns nullopt when the simulator produced
  /// non-finite output. Throws std::invalid_argument outside the prior support.
  std::optional<Eigen::VectorXd> simulate(const Eigen::VectorXd& theta, RandomStream& rng) const;

  virtual bool has_true_loglik() const { return true; }
  /// Exact log p(x | theta); throws Error(unsupported) when not tractable.
  double true_loglik(const Eigen::VectorXd& x, const Eigen::VectorXd& theta) const;
  /// Gradient of true_loglik w.r.t. theta. Central differences unless a task
  /// provides the closed form.
  virtual Eigen::VectorXd true_loglik_grad(const Eigen::VectorXd& x,
                                           const Eigen::VectorXd& theta) const;

  /// Parameter and observation of the k-th benchmark observation; both are
  /// fixed functions of (task name, k).
  virtual Eigen::VectorXd true_theta(int index) const;
  virtual Eigen::VectorXd observation(int index) const;

 protected:
  virtual Eigen::VectorXd simulate_unchecked(const Eigen::VectorXd& theta,
                                             RandomStream& rng) const = 0;
  virtual double loglik(const Eigen::VectorXd& x, const Eigen::VectorXd& theta) const;
};

/// two_moons, slcp, gaussian_linear_uniform, lotka_volterra, bimodal
std::unique_ptr<Task> make_task(std::string_view name);
std::vector<std::string> task_names();

/// Pairs (theta, x) in simulation order, with the round each pair came from.
struct Dataset {
  Eigen::Index theta_dim = 0;
  Eigen::Index x_dim = 0;
  std::vector<Eigen::VectorXd> thetas;
  std::vector<Eigen::VectorXd> xs;
  std::vector<int> rounds;

  Dataset() = default;
  Dataset(Eigen::Index theta_dim, Eigen::Index x_dim) : theta_dim(theta_dim), x_dim(x_dim) {}

  std::size_t size() const { return thetas.size(); }
  bool empty() const { return thetas.empty(); }
  /// Throws std::invalid_argument on a non-finite entry, wrong dims or a
  /// decreasing round index.
  void add(const Eigen::VectorXd& theta, const Eigen::VectorXd& x, int round);
  void append(const Dataset& other);

  Eigen::MatrixXd theta_matrix() const;  // theta_dim x n
  Eigen::MatrixXd x_matrix() const;      // x_dim x n
  /// Columns [x; theta], the energy-network input layout.
  Eigen::MatrixXd joint_matrix() const;
};

struct SimulationReport {
  Dataset data;
  std::size_t attempts = 0;
  std::size_t invalid = 0;
};

/// Simulates one pair per column of `thetas`, each with its own child stream.
/// Invalid simulations are dropped and counted.
SimulationReport simulate_batch(const Task& task, const Eigen::MatrixXd& thetas, int round,
                                const RandomStream& rng);

void write_dataset_csv(std::ostream& out, const Dataset& data);
Dataset read_dataset_csv(std::istream& in);

/// One theta per row, columns theta_0..theta_{d-1}.
void write_samples_csv(std::ostream& out, const Eigen::MatrixXd& samples);
Eigen::MatrixXd read_samples_csv(std::istream& in);

struct ReferenceConfig {
  int chains = 1000;
  int warmup = 1000;
  int thin = 10;
  /// Prior draws used to importance-resample the chain starting points.
  int candidates = 100000;
  int max_retries = 5;
};

struct ReferenceDiagnostics {
  double acceptance_rate = 0.0;
  double max_split_rhat = 0.0;
  int retries = 0;
  int chains = 0;
  nlohmann::json to_json() const;
};

/// n approximate draws from p(theta | x_o) by MALA on prior x true likelihood
/// (columns of the result). Throws Error(initialization_failure) when no
/// candidate with finite posterior density is found after the retries.
Eigen::MatrixXd reference_posterior(const Task& task, const Eigen::VectorXd& x_o, int n,
                                    const RandomStream& rng, const ReferenceConfig& cfg = {},
                                    ReferenceDiagnostics* diagnostics = nullptr);

}  // namespace unle
