#pragma once

#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "unle/rng.hpp"

namespace unle::nn {

enum class Activation { swish, tanh, identity };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view name);

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

/// Weights of a small dense network. The activation applies to every hidden
/// layer; the output layer is linear.
///
/// Flat parameter layout (used by gradients and Adam): layer by layer, the
/// weight matrix in row-major order followed by the bias.
struct NetParams {
  std::vector<DenseLayer> layers;
  Activation activation = Activation::swish;

  Eigen::Index input_dim() const;
  Eigen::Index output_dim() const;
  Eigen::Index param_count() const;
  std::vector<int> layer_sizes() const;

  Eigen::VectorXd flatten() const;
  void assign(const Eigen::VectorXd& flat);

  /// Throws std::invalid_argument on inconsistent shapes or non-finite entries.
  void validate() const;
};

/// He-style init: weights ~ Normal(0, 2/fan_in), zero biases.
NetParams net_init(std::span<const int> layer_sizes, Activation activation,
                   RandomStream& rng);

Eigen::VectorXd net_forward(const NetParams& p, const Eigen::VectorXd& input);
/// Gradient of the (scalar) output w.r.t. the flat parameters.
Eigen::VectorXd net_grad_params(const NetParams& p, const Eigen::VectorXd& input);
/// Gradient of the (scalar) output w.r.t. the input.
Eigen::VectorXd net_grad_input(const NetParams& p, const Eigen::VectorXd& input);

// Batched kernels. Each column of `inputs` is one sample. Work is split into
// fixed-size column chunks that run under OpenMP; per-chunk partial sums are
// reduced in chunk order, so results do not depend on the thread count.

inline constexpr Eigen::Index kChunkColumns = 64;

Eigen::MatrixXd forward_batch(const NetParams& p, const Eigen::MatrixXd& inputs);

/// Scalar-output nets: values (B) and input gradients (in x B).
void value_and_input_grad_batch(const NetParams& p, const Eigen::MatrixXd& inputs,
                                Eigen::VectorXd& values,
                                Eigen::MatrixXd& input_grads);

/// sum_b weights[b] * d f(inputs_b) / d params
Eigen::VectorXd weighted_param_grad(const NetParams& p, const Eigen::MatrixXd& inputs,
                                    const Eigen::VectorXd& weights);

/// sum_b weights[b] * d/dparams < grad_x f(inputs_b), directions_b >
///
/// Mixed second derivative used to train a network through a loss on its
/// input gradient (the log-normalizer network).
Eigen::VectorXd weighted_input_grad_param_grad(const NetParams& p,
                                               const Eigen::MatrixXd& inputs,
                                               const Eigen::MatrixXd& directions,
                                               const Eigen::VectorXd& weights);

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long step = 0;
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

AdamState adam_init(Eigen::Index n_params, double learning_rate = 0.01);

/// One bias-corrected Adam step that *descends* along `grad`.
void adam_step(AdamState& state, Eigen::VectorXd& params, const Eigen::VectorXd& grad);

nlohmann::json to_json(const NetParams& p);
NetParams net_from_json(const nlohmann::json& j);

}  // namespace unle::nn
