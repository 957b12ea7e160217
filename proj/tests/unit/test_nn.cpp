#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <vector>

#include "unle/nn.hpp"
#include "unle/nn_reference.hpp"

using namespace unle;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

nn::NetParams random_net(std::uint64_t seed, nn::Activation act = nn::Activation::swish) {
  RandomStream rng(seed);
  const std::array<int, 6> sizes{3, 50, 50, 50, 50, 1};
  nn::NetParams p = nn::net_init(sizes, act, rng);
  for (auto& l : p.layers) l.bias = 0.1 * rng.normal_vector(l.bias.size());
  return p;
}

std::vector<double> as_vec(const VectorXd& v) { return {v.data(), v.data() + v.size()}; }

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3}); }

}  // namespace

TEST(NetInit, LayerShapes) {
  const nn::NetParams p = random_net(0);
  ASSERT_EQ(p.layers.size(), 5u);
  EXPECT_EQ(p.layers[0].weight.rows(), 50);
  EXPECT_EQ(p.layers[0].weight.cols(), 3);
  for (int k = 1; k < 4; ++k) {
    EXPECT_EQ(p.layers[k].weight.rows(), 50);
    EXPECT_EQ(p.layers[k].weight.cols(), 50);
  }
  EXPECT_EQ(p.layers[4].weight.rows(), 1);
  EXPECT_EQ(p.layers[4].weight.cols(), 50);
  EXPECT_EQ(p.input_dim(), 3);
  EXPECT_EQ(p.output_dim(), 1);
  EXPECT_EQ(p.layer_sizes(), (std::vector<int>{3, 50, 50, 50, 50, 1}));
}

TEST(NetInit, Deterministic) {
  const nn::NetParams a = random_net(5), b = random_net(5);
  EXPECT_EQ(a.flatten(), b.flatten());
}

TEST(NetParams, ValidateRejectsBadShapes) {
  nn::NetParams p = random_net(1);
  p.layers[1].weight.resize(50, 49);
  EXPECT_THROW(p.validate(), std::invalid_argument);
  nn::NetParams q = random_net(1);
  q.layers[0].bias[0] = std::nan("");
  EXPECT_THROW(q.validate(), std::invalid_argument);
}

TEST(NetParams, FlattenAssignRoundTrip) {
  nn::NetParams p = random_net(2);
  const VectorXd flat = p.flatten();
  EXPECT_EQ(flat.size(), p.param_count());
  nn::NetParams q = random_net(3);
  q.assign(flat);
  EXPECT_EQ(q.flatten(), flat);
}

TEST(NetForward, ZeroWeightsGiveBias) {
  RandomStream rng(0);
  const std::array<int, 2> sizes{2, 1};
  nn::NetParams p = nn::net_init(sizes, nn::Activation::identity, rng);
  p.layers[0].weight.setZero();
  p.layers[0].bias << 1.25;
  EXPECT_DOUBLE_EQ(nn::net_forward(p, VectorXd::Constant(2, 3.0))[0], 1.25);
}

TEST(NetForward, LinearNetIsAffine) {
  RandomStream rng(4);
  const std::array<int, 2> sizes{3, 2};
  nn::NetParams p = nn::net_init(sizes, nn::Activation::identity, rng);
  p.layers[0].bias << 0.5, -1.0;
  const VectorXd x = rng.normal_vector(3);
  const VectorXd expected = p.layers[0].weight * x + p.layers[0].bias;
  EXPECT_LT((nn::net_forward(p, x) - expected).norm(), 1e-14);
}

TEST(NetForward, SwishOfZeroIsZero) {
  nn::NetParams p;
  p.activation = nn::Activation::swish;
  p.layers.push_back({MatrixXd::Ones(1, 1), VectorXd::Zero(1)});
  p.layers.push_back({MatrixXd::Ones(1, 1), VectorXd::Zero(1)});
  EXPECT_DOUBLE_EQ(nn::net_forward(p, VectorXd::Zero(1))[0], 0.0);
}

TEST(NetForward, MatchesReferenceAndBatch) {
  const nn::NetParams p = random_net(6);
  RandomStream rng(7);
  MatrixXd xs(3, 130);
  for (int c = 0; c < xs.cols(); ++c) xs.col(c) = rng.normal_vector(3);
  const MatrixXd batch = nn::forward_batch(p, xs);
  for (int c = 0; c < xs.cols(); ++c) {
    const double ref = nn::reference::forward(p, as_vec(xs.col(c)))[0];
    EXPECT_NEAR(nn::net_forward(p, xs.col(c))[0], ref, 1e-12);
    EXPECT_NEAR(batch(0, c), ref, 1e-12);
  }
}

TEST(NetGrad, LinearParamGradIsInput) {
  RandomStream rng(8);
  const std::array<int, 2> sizes{3, 1};
  const nn::NetParams p = nn::net_init(sizes, nn::Activation::identity, rng);
  const VectorXd x = rng.normal_vector(3);
  const VectorXd g = nn::net_grad_params(p, x);
  ASSERT_EQ(g.size(), 4);
  EXPECT_LT((g.head(3) - x).norm(), 1e-14);
  EXPECT_DOUBLE_EQ(g[3], 1.0);
  EXPECT_LT((nn::net_grad_input(p, x) - p.layers[0].weight.row(0).transpose()).norm(), 1e-14);
}

TEST(NetGrad, ZeroInputZeroFirstLayerWeightGrad) {
  nn::NetParams p = random_net(9);
  for (auto& l : p.layers) l.bias.setZero();
  const VectorXd g = nn::net_grad_params(p, VectorXd::Zero(3));
  EXPECT_EQ(g.head(150).norm(), 0.0);
}

TEST(NetGrad, ParamGradMatchesFiniteDifferences) {
  nn::NetParams p = random_net(10);
  RandomStream rng(11);
  const VectorXd x = rng.normal_vector(3);
  const VectorXd g = nn::net_grad_params(p, x);
  const VectorXd flat = p.flatten();
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < flat.size(); i += 37) {
    VectorXd up = flat, dn = flat;
    up[i] += h;
    dn[i] -= h;
    p.assign(up);
    const double fu = nn::net_forward(p, x)[0];
    p.assign(dn);
    const double fd = nn::net_forward(p, x)[0];
    EXPECT_LT(rel_err(g[i], (fu - fd) / (2 * h)), 1e-5) << "param " << i;
  }
}

TEST(NetGrad, InputGradMatchesFiniteDifferences) {
  const nn::NetParams p = random_net(12);
  RandomStream rng(13);
  const VectorXd x = rng.normal_vector(3);
  const VectorXd g = nn::net_grad_input(p, x);
  const double h = 1e-5;
  for (int i = 0; i < 3; ++i) {
    VectorXd up = x, dn = x;
    up[i] += h;
    dn[i] -= h;
    const double fd = (nn::net_forward(p, up)[0] - nn::net_forward(p, dn)[0]) / (2 * h);
    EXPECT_LT(rel_err(g[i], fd), 1e-5);
  }
}

TEST(NetGrad, InputGradVanishesAtLocalMinimum) {
  nn::NetParams p;
  p.activation = nn::Activation::swish;
  p.layers.push_back({MatrixXd::Ones(1, 1), VectorXd::Zero(1)});
  p.layers.push_back({MatrixXd::Ones(1, 1), VectorXd::Zero(1)});
  // swish(x) = x sigmoid(x) has its minimum where 1 + x (1 - sigmoid(x)) = 0.
  double x = -1.278;
  for (int i = 0; i < 50; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    const double f = s * (1 + x * (1 - s));
    const double df = s * (1 - s) * (2 + x * (1 - 2 * s));
    x -= f / df;
  }
  EXPECT_LT(std::abs(nn::net_grad_input(p, VectorXd::Constant(1, x))[0]), 1e-10);
}

TEST(NetBatch, InputGradAndParamGradMatchReference) {
  const nn::NetParams p = random_net(14);
  RandomStream rng(15);
  MatrixXd xs(3, 100), dirs(3, 100);
  VectorXd w(100);
  for (int c = 0; c < 100; ++c) {
    xs.col(c) = rng.normal_vector(3);
    dirs.col(c) = rng.normal_vector(3);
    w[c] = rng.uniform();
  }
  VectorXd vals;
  MatrixXd grads;
  nn::value_and_input_grad_batch(p, xs, vals, grads);
  VectorXd pg = VectorXd::Zero(p.param_count()), mg = VectorXd::Zero(p.param_count());
  for (int c = 0; c < 100; ++c) {
    const auto gi = nn::reference::grad_input(p, as_vec(xs.col(c)));
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(grads(i, c), gi[i], 1e-12);
    EXPECT_NEAR(vals[c], nn::reference::forward(p, as_vec(xs.col(c)))[0], 1e-12);
    const auto gp = nn::reference::grad_params(p, as_vec(xs.col(c)));
    const auto gm = nn::reference::input_grad_param_grad(p, as_vec(xs.col(c)), as_vec(dirs.col(c)));
    for (Eigen::Index k = 0; k < pg.size(); ++k) {
      pg[k] += w[c] * gp[static_cast<std::size_t>(k)];
      mg[k] += w[c] * gm[static_cast<std::size_t>(k)];
    }
  }
  EXPECT_LT((nn::weighted_param_grad(p, xs, w) - pg).norm(), 1e-10 * (1 + pg.norm()));
  EXPECT_LT((nn::weighted_input_grad_param_grad(p, xs, dirs, w) - mg).norm(), 1e-10 * (1 + mg.norm()));
}

TEST(Adam, ZeroGradientLeavesParams) {
  nn::AdamState s = nn::adam_init(3, 0.1);
  VectorXd params(3);
  params << 1, 2, 3;
  const VectorXd before = params;
  for (int i = 0; i < 5; ++i) nn::adam_step(s, params, VectorXd::Zero(3));
  EXPECT_EQ(params, before);
}

TEST(Adam, MomentsDecayUnderZeroGradient) {
  nn::AdamState s = nn::adam_init(3, 0.1);
  s.m = VectorXd::Constant(3, 1.0);
  s.v = VectorXd::Constant(3, 1.0);
  VectorXd params = VectorXd::Zero(3);
  nn::adam_step(s, params, VectorXd::Zero(3));
  EXPECT_NEAR(s.m[0], 0.9, 1e-15);
  EXPECT_NEAR(s.v[0], 0.999, 1e-15);
}

TEST(Adam, ConstantGradientStepApproachesLearningRate) {
  nn::AdamState s = nn::adam_init(2, 0.01);
  VectorXd params = VectorXd::Zero(2);
  VectorXd g(2);
  g << 3.0, -0.5;
  VectorXd prev = params;
  for (int i = 0; i < 2000; ++i) {
    prev = params;
    nn::adam_step(s, params, g);
  }
  const VectorXd step = params - prev;
  EXPECT_NEAR(step[0], -0.01, 1e-8);
  EXPECT_NEAR(step[1], 0.01, 1e-8);
}

TEST(Adam, Deterministic) {
  auto trajectory = [] {
    RandomStream rng(21);
    nn::AdamState s = nn::adam_init(4);
    VectorXd p = VectorXd::Zero(4);
    for (int i = 0; i < 50; ++i) nn::adam_step(s, p, rng.normal_vector(4));
    return p;
  };
  EXPECT_EQ(trajectory(), trajectory());
}

TEST(NetJson, RoundTrip) {
  const nn::NetParams p = random_net(16, nn::Activation::tanh);
  const nn::NetParams q = nn::net_from_json(nn::to_json(p));
  EXPECT_EQ(q.activation, nn::Activation::tanh);
  EXPECT_EQ(q.flatten(), p.flatten());
  EXPECT_EQ(q.layer_sizes(), p.layer_sizes());
}

TEST(Activation, Names) {
  for (auto a : {nn::Activation::swish, nn::Activation::tanh, nn::Activation::identity})
    EXPECT_EQ(nn::activation_from_string(nn::to_string(a)), a);
  EXPECT_THROW(nn::activation_from_string("relu6"), std::invalid_argument);
}
