#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "unle/energy.hpp"

using namespace unle;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

QuadraticEnergy quad_2x1() {
  MatrixXd chol(2, 2), coupling(2, 1), fixed(1, 1);
  chol << 1.5, 0.0, 0.4, 0.8;
  coupling << 0.7, -1.2;
  fixed << 0.3;
  return QuadraticEnergy(chol, coupling, fixed);
}

MatrixXd random_columns(Index rows, Index cols, std::uint64_t seed) {
  RandomStream rng(seed);
  MatrixXd m(rows, cols);
  for (Index c = 0; c < cols; ++c) m.col(c) = rng.normal_vector(rows);
  return m;
}

void expect_input_grad_matches_fd(const ConditionalEnergy& e, const MatrixXd& inputs) {
  VectorXd en;
  MatrixXd grad;
  e.evaluate(inputs, en, &grad);
  const double h = 1e-6;
  for (Index c = 0; c < inputs.cols(); ++c)
    for (Index i = 0; i < inputs.rows(); ++i) {
      MatrixXd up = inputs.col(c), dn = inputs.col(c);
      up(i, 0) += h;
      dn(i, 0) -= h;
      VectorXd eu, ed;
      e.evaluate(up, eu, nullptr);
      e.evaluate(dn, ed, nullptr);
      EXPECT_NEAR(grad(i, c), (eu[0] - ed[0]) / (2 * h), 1e-6 * (1 + std::abs(grad(i, c))));
    }
}

void expect_param_grad_matches_fd(ConditionalEnergy& e, const MatrixXd& inputs, const VectorXd& w) {
  const VectorXd g = e.weighted_param_grad(inputs, w);
  const VectorXd p0 = e.params();
  ASSERT_EQ(g.size(), p0.size());
  const double h = 1e-6;
  const Index stride = std::max<Index>(1, p0.size() / 40);
  for (Index k = 0; k < p0.size(); k += stride) {
    VectorXd up = p0, dn = p0;
    up[k] += h;
    dn[k] -= h;
    VectorXd eu, ed;
    e.set_params(up);
    e.evaluate(inputs, eu, nullptr);
    e.set_params(dn);
    e.evaluate(inputs, ed, nullptr);
    const double fd = w.dot(eu - ed) / (2 * h);
    EXPECT_NEAR(g[k], fd, 1e-5 * (1 + std::abs(fd))) << "param " << k;
  }
  e.set_params(p0);
}

}  // namespace

TEST(StackInputs, Broadcasts) {
  const MatrixXd x = random_columns(2, 3, 1);
  const MatrixXd theta = random_columns(1, 1, 2);
  const MatrixXd s = stack_inputs(x, theta);
  ASSERT_EQ(s.rows(), 3);
  ASSERT_EQ(s.cols(), 3);
  EXPECT_EQ(s.topRows(2), x);
  for (Index c = 0; c < 3; ++c) EXPECT_EQ(s(2, c), theta(0, 0));
  EXPECT_THROW(stack_inputs(random_columns(2, 3, 1), random_columns(1, 2, 1)), std::invalid_argument);
}

TEST(QuadraticEnergy, ValueMatchesFormula) {
  const QuadraticEnergy e = quad_2x1();
  VectorXd x(2), theta(1);
  x << 0.3, -0.8;
  theta << 1.7;
  const MatrixXd P = e.precision();
  const double expected = 0.5 * x.dot(P * x) - x.dot(e.coupling() * theta) + 0.5 * 0.3 * theta[0] * theta[0];
  EXPECT_NEAR(e.energy(x, theta), expected, 1e-13);
}

TEST(QuadraticEnergy, Gradients) {
  QuadraticEnergy e = quad_2x1();
  const MatrixXd inputs = random_columns(3, 5, 3);
  expect_input_grad_matches_fd(e, inputs);
  expect_param_grad_matches_fd(e, inputs, VectorXd::LinSpaced(5, 0.1, 0.5));
}

TEST(QuadraticEnergy, LogNormalizerMatchesQuadrature) {
  // One-dimensional x so the integral of exp(-E) is a plain sum.
  const QuadraticEnergy e(MatrixXd::Constant(1, 1, 1.3), MatrixXd::Constant(1, 1, 0.6),
                          MatrixXd::Constant(1, 1, 0.2));
  auto log_z = [&](double t) {
    const VectorXd theta = VectorXd::Constant(1, t);
    double s = 0.0;
    const int g = 40000;
    const double lo = -15.0, hi = 15.0, h = (hi - lo) / g;
    for (int i = 0; i < g; ++i) s += std::exp(-e.energy(VectorXd::Constant(1, lo + (i + 0.5) * h), theta)) * h;
    return std::log(s);
  };
  const double c = log_z(0.0) - e.log_normalizer(VectorXd::Zero(1));
  for (double t : {-2.0, 0.5, 3.0})
    EXPECT_NEAR(log_z(t) - e.log_normalizer(VectorXd::Constant(1, t)), c, 1e-9);
}

TEST(QuadraticEnergy, ParamsRoundTripAndJson) {
  QuadraticEnergy e = quad_2x1();
  const VectorXd p = e.params();
  e.set_params(p * 2.0);
  EXPECT_EQ(e.params(), p * 2.0);
  const auto back = energy_from_json(e.to_json());
  EXPECT_EQ(back->params(), e.params());
  const MatrixXd inputs = random_columns(3, 4, 4);
  VectorXd a, b;
  e.evaluate(inputs, a, nullptr);
  back->evaluate(inputs, b, nullptr);
  EXPECT_EQ(a, b);
}

TEST(NeuralEnergy, Gradients) {
  RandomStream rng(5);
  NeuralEnergy e = NeuralEnergy::create(2, 3, rng, 16, 3);
  e.set_standardization(VectorXd::LinSpaced(5, -0.2, 0.2), VectorXd::LinSpaced(5, 0.5, 2.0));
  const MatrixXd inputs = random_columns(5, 6, 6);
  expect_input_grad_matches_fd(e, inputs);
  expect_param_grad_matches_fd(e, inputs, VectorXd::LinSpaced(6, -1.0, 1.0));
}

TEST(NeuralEnergy, Shapes) {
  RandomStream rng(7);
  const NeuralEnergy e = NeuralEnergy::create(8, 5, rng);
  EXPECT_EQ(e.input_dim(), 13);
  EXPECT_EQ(e.net().layer_sizes(), (std::vector<int>{13, 50, 50, 50, 50, 1}));
  EXPECT_EQ(e.param_count(), e.params().size());
}

TEST(NeuralEnergy, StandardizationIsFitFromData) {
  RandomStream rng(8);
  NeuralEnergy e = NeuralEnergy::create(1, 1, rng, 8, 2);
  MatrixXd inputs(2, 4);
  inputs << 1, 2, 3, 4, 10, 10, 10, 10;
  e.fit_standardization(inputs);
  EXPECT_NEAR(e.input_shift()[0], 2.5, 1e-14);
  EXPECT_GT(e.input_scale()[0], 0.0);
  EXPECT_NEAR(e.input_scale()[0], std::sqrt(5.0 / 3.0), 1e-14);
  EXPECT_EQ(e.input_scale()[1], 1.0);
}

TEST(NeuralEnergy, CloneAndJsonAreExact) {
  RandomStream rng(9);
  NeuralEnergy e = NeuralEnergy::create(2, 2, rng, 12, 2);
  e.set_standardization(VectorXd::Constant(4, 0.3), VectorXd::Constant(4, 1.7));
  const MatrixXd inputs = random_columns(4, 7, 10);
  VectorXd a, b, c;
  e.evaluate(inputs, a, nullptr);
  e.clone()->evaluate(inputs, b, nullptr);
  energy_from_json(e.to_json())->evaluate(inputs, c, nullptr);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
}
