#pragma once

#include <memory>

#include <Eigen/Dense>
#include <json.hpp>

#include "unle/nn.hpp"

namespace unle {

/// Parametric conditional energy E_psi(x, theta). Inputs are stacked as
/// columns [x; theta]; the conditional density is exp(-E) / Z(theta).
class ConditionalEnergy {
 public:
  virtual ~ConditionalEnergy() = default;

  virtual Eigen::Index x_dim() const = 0;
  virtual Eigen::Index theta_dim() const = 0;
  Eigen::Index input_dim() const { return x_dim() + theta_dim(); }

  virtual Eigen::Index param_count() const = 0;
  virtual Eigen::VectorXd params() const = 0;
  virtual void set_params(const Eigen::VectorXd& flat) = 0;

  /// Energy of every column of `inputs`; input gradients when requested.
  virtual void evaluate(const Eigen::MatrixXd& inputs, Eigen::VectorXd& energy,
                        Eigen::MatrixXd* input_grad) const = 0;
  /// sum_b weights[b] * grad_psi E(inputs_b)
  virtual Eigen::VectorXd weighted_param_grad(const Eigen::MatrixXd& inputs,
                                              const Eigen::VectorXd& weights) const = 0;

  virtual std::unique_ptr<ConditionalEnergy> clone() const = 0;
  virtual nlohmann::json to_json() const = 0;

  double energy(const Eigen::VectorXd& x, const Eigen::VectorXd& theta) const;
};

/// Stacks [x; theta] column-wise. A single column on either side broadcasts.
Eigen::MatrixXd stack_inputs(const Eigen::MatrixXd& x, const Eigen::MatrixXd& theta);

/// The energy network: a scalar-output MLP on [x; theta], with a fixed input
/// standardization (shift, scale) applied before the first layer.
class NeuralEnergy final : public ConditionalEnergy {
 public:
  NeuralEnergy(nn::NetParams net, Eigen::Index x_dim, Eigen::Index theta_dim);

  /// [x_dim + theta_dim, width x depth, 1] swish network.
  static NeuralEnergy create(Eigen::Index x_dim, Eigen::Index theta_dim, RandomStream& rng,
                             int width = 50, int depth = 4,
                             nn::Activation activation = nn::Activation::swish);

  Eigen::Index x_dim() const override { return x_dim_; }
  Eigen::Index theta_dim() const override { return theta_dim_; }
  Eigen::Index param_count() const override { return net_.param_count(); }
  Eigen::VectorXd params() const override { return net_.flatten(); }
  void set_params(const Eigen::VectorXd& flat) override { net_.assign(flat); }

  void evaluate(const Eigen::MatrixXd& inputs, Eigen::VectorXd& energy,
                Eigen::MatrixXd* input_grad) const override;
  Eigen::VectorXd weighted_param_grad(const Eigen::MatrixXd& inputs,
                                      const Eigen::VectorXd& weights) const override;
  std::unique_ptr<ConditionalEnergy> clone() const override;
  nlohmann::json to_json() const override;

  const nn::NetParams& net() const { return net_; }
  nn::NetParams& net() { return net_; }

  /// Standardize inputs with per-coordinate statistics of `inputs` (columns).
  void fit_standardization(const Eigen::MatrixXd& inputs);
  void set_standardization(const Eigen::VectorXd& shift, const Eigen::VectorXd& scale);
  const Eigen::VectorXd& input_shift() const { return shift_; }
  const Eigen::VectorXd& input_scale() const { return scale_; }

 private:
  Eigen::MatrixXd standardize(const Eigen::MatrixXd& inputs) const;

  nn::NetParams net_;
  Eigen::Index x_dim_;
  Eigen::Index theta_dim_;
  Eigen::VectorXd shift_;
  Eigen::VectorXd scale_;
};

/// E(x, theta) = 1/2 x' L L' x - x' A theta + 1/2 theta' Q theta
///
/// L (lower triangular) and A are trainable, Q is fixed. With L L' = P the
/// conditional law is Normal(P^-1 A theta, P^-1) and
/// log Z(theta) = 1/2 (A theta)' P^-1 (A theta) - 1/2 theta' Q theta + const.
/// Used as a closed-form check of the training loops and samplers.
class QuadraticEnergy final : public ConditionalEnergy {
 public:
  QuadraticEnergy(Eigen::MatrixXd chol, Eigen::MatrixXd coupling, Eigen::MatrixXd fixed_theta);

  Eigen::Index x_dim() const override { return chol_.rows(); }
  Eigen::Index theta_dim() const override { return fixed_.rows(); }
  Eigen::Index param_count() const override;
  Eigen::VectorXd params() const override;
  void set_params(const Eigen::VectorXd& flat) override;

  void evaluate(const Eigen::MatrixXd& inputs, Eigen::VectorXd& energy,
                Eigen::MatrixXd* input_grad) const override;
  Eigen::VectorXd weighted_param_grad(const Eigen::MatrixXd& inputs,
                                      const Eigen::VectorXd& weights) const override;
  std::unique_ptr<ConditionalEnergy> clone() const override;
  nlohmann::json to_json() const override;

  Eigen::MatrixXd precision() const { return chol_ * chol_.transpose(); }
  const Eigen::MatrixXd& chol() const { return chol_; }
  const Eigen::MatrixXd& coupling() const { return coupling_; }
  /// Closed-form log Z(theta) up to the theta-independent constant.
  double log_normalizer(const Eigen::VectorXd& theta) const;

 private:
  Eigen::MatrixXd chol_;      // x_dim x x_dim, lower triangular
  Eigen::MatrixXd coupling_;  // x_dim x theta_dim
  Eigen::MatrixXd fixed_;     // theta_dim x theta_dim
};

std::unique_ptr<ConditionalEnergy> energy_from_json(const nlohmann::json& j);

}  // namespace unle
