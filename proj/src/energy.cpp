#include "unle/energy.hpp"

#include <algorithm>
#include <stdexcept>

namespace unle {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

double ConditionalEnergy::energy(const VectorXd& x, const VectorXd& theta) const {
  VectorXd e;
  evaluate(stack_inputs(x, theta), e, nullptr);
  return e[0];
}

MatrixXd stack_inputs(const MatrixXd& x, const MatrixXd& theta) {
  const Index n = x.cols() == 0 || theta.cols() == 0 ? 0 : std::max(x.cols(), theta.cols());
  if ((x.cols() != n && x.cols() != 1) || (theta.cols() != n && theta.cols() != 1))
    throw std::invalid_argument("stack_inputs: column counts differ");
  MatrixXd out(x.rows() + theta.rows(), n);
  auto fill = [n](auto block, const MatrixXd& m) {
    if (m.rows() == 0 || n == 0) return;
    if (m.cols() == n) block = m;
    else block = m.col(0).replicate(1, n);
  };
  fill(out.topRows(x.rows()), x);
  fill(out.bottomRows(theta.rows()), theta);
  return out;
}

// ---------------------------------------------------------------------------

NeuralEnergy::NeuralEnergy(nn::NetParams net, Index x_dim, Index theta_dim)
    : net_(std::move(net)),
      x_dim_(x_dim),
      theta_dim_(theta_dim),
      shift_(VectorXd::Zero(x_dim + theta_dim)),
      scale_(VectorXd::Ones(x_dim + theta_dim)) {
  net_.validate();
  if (net_.input_dim() != x_dim + theta_dim)
    throw std::invalid_argument("energy net input dim must equal x_dim + theta_dim");
  if (net_.output_dim() != 1) throw std::invalid_argument("energy net must have scalar output");
}

NeuralEnergy NeuralEnergy::create(Index x_dim, Index theta_dim, RandomStream& rng, int width,
                                  int depth, nn::Activation activation) {
  std::vector<int> sizes{static_cast<int>(x_dim + theta_dim)};
  for (int i = 0; i < depth; ++i) sizes.push_back(width);
  sizes.push_back(1);
  return NeuralEnergy(nn::net_init(sizes, activation, rng), x_dim, theta_dim);
}

MatrixXd NeuralEnergy::standardize(const MatrixXd& inputs) const {
  if (inputs.rows() != input_dim())
    throw std::invalid_argument("energy input has wrong dimension");
  return ((inputs.colwise() - shift_).array().colwise() / scale_.array()).matrix();
}

void NeuralEnergy::evaluate(const MatrixXd& inputs, VectorXd& energy, MatrixXd* input_grad) const {
  const MatrixXd z = standardize(inputs);
  if (!input_grad) {
    energy = nn::forward_batch(net_, z).row(0).transpose();
    return;
  }
  nn::value_and_input_grad_batch(net_, z, energy, *input_grad);
  input_grad->array().colwise() /= scale_.array();
}

VectorXd NeuralEnergy::weighted_param_grad(const MatrixXd& inputs, const VectorXd& weights) const {
  return nn::weighted_param_grad(net_, standardize(inputs), weights);
}

std::unique_ptr<ConditionalEnergy> NeuralEnergy::clone() const {
  return std::make_unique<NeuralEnergy>(*this);
}

void NeuralEnergy::fit_standardization(const MatrixXd& inputs) {
  if (inputs.rows() != input_dim() || inputs.cols() < 2)
    throw std::invalid_argument("fit_standardization needs at least two input columns");
  shift_ = inputs.rowwise().mean();
  const MatrixXd centered = inputs.colwise() - shift_;
  scale_ = (centered.array().square().rowwise().sum() / static_cast<double>(inputs.cols() - 1))
               .sqrt()
               .matrix();
  for (Index i = 0; i < scale_.size(); ++i)
    if (!(scale_[i] > 1e-12)) scale_[i] = 1.0;
}

void NeuralEnergy::set_standardization(const VectorXd& shift, const VectorXd& scale) {
  if (shift.size() != input_dim() || scale.size() != input_dim())
    throw std::invalid_argument("standardization size mismatch");
  if (!shift.allFinite() || !(scale.array() > 0.0).all())
    throw std::invalid_argument("standardization needs finite shift and positive scale");
  shift_ = shift;
  scale_ = scale;
}

nlohmann::json NeuralEnergy::to_json() const {
  nlohmann::json j;
  j["kind"] = "neural";
  j["x_dim"] = x_dim_;
  j["theta_dim"] = theta_dim_;
  j["input_shift"] = std::vector<double>(shift_.data(), shift_.data() + shift_.size());
  j["input_scale"] = std::vector<double>(scale_.data(), scale_.data() + scale_.size());
  j["net"] = nn::to_json(net_);
  return j;
}

// ---------------------------------------------------------------------------

QuadraticEnergy::QuadraticEnergy(MatrixXd chol, MatrixXd coupling, MatrixXd fixed_theta)
    : chol_(std::move(chol)), coupling_(std::move(coupling)), fixed_(std::move(fixed_theta)) {
  if (chol_.rows() != chol_.cols()) throw std::invalid_argument("L must be square");
  if (coupling_.rows() != chol_.rows() || coupling_.cols() != fixed_.rows() ||
      fixed_.rows() != fixed_.cols())
    throw std::invalid_argument("QuadraticEnergy: inconsistent shapes");
  chol_ = chol_.triangularView<Eigen::Lower>();
}

Index QuadraticEnergy::param_count() const {
  const Index d = chol_.rows();
  return d * (d + 1) / 2 + coupling_.size();
}

VectorXd QuadraticEnergy::params() const {
  VectorXd p(param_count());
  Index k = 0;
  for (Index r = 0; r < chol_.rows(); ++r)
    for (Index c = 0; c <= r; ++c) p[k++] = chol_(r, c);
  for (Index r = 0; r < coupling_.rows(); ++r)
    for (Index c = 0; c < coupling_.cols(); ++c) p[k++] = coupling_(r, c);
  return p;
}

void QuadraticEnergy::set_params(const VectorXd& flat) {
  if (flat.size() != param_count()) throw std::invalid_argument("wrong parameter count");
  Index k = 0;
  for (Index r = 0; r < chol_.rows(); ++r)
    for (Index c = 0; c <= r; ++c) chol_(r, c) = flat[k++];
  for (Index r = 0; r < coupling_.rows(); ++r)
    for (Index c = 0; c < coupling_.cols(); ++c) coupling_(r, c) = flat[k++];
}

void QuadraticEnergy::evaluate(const MatrixXd& inputs, VectorXd& energy, MatrixXd* input_grad) const {
  if (inputs.rows() != input_dim()) throw std::invalid_argument("energy input has wrong dimension");
  const Index dx = x_dim(), dt = theta_dim();
  const auto x = inputs.topRows(dx);
  const auto theta = inputs.bottomRows(dt);
  const MatrixXd lx = chol_.transpose() * x;
  const MatrixXd a_theta = coupling_ * theta;
  const MatrixXd q_theta = fixed_ * theta;
  energy = 0.5 * lx.colwise().squaredNorm().transpose() -
           x.cwiseProduct(a_theta).colwise().sum().transpose() +
           0.5 * theta.cwiseProduct(q_theta).colwise().sum().transpose();
  if (input_grad) {
    input_grad->resize(inputs.rows(), inputs.cols());
    input_grad->topRows(dx) = chol_ * lx - a_theta;
    input_grad->bottomRows(dt) = -coupling_.transpose() * x + q_theta;
  }
}

VectorXd QuadraticEnergy::weighted_param_grad(const MatrixXd& inputs, const VectorXd& weights) const {
  const Index dx = x_dim(), dt = theta_dim();
  const MatrixXd x = inputs.topRows(dx);
  const MatrixXd theta = inputs.bottomRows(dt);
  const MatrixXd wx = x * weights.asDiagonal();
  const MatrixXd d_chol = (wx * x.transpose()) * chol_;  // sum_b w_b x_b x_b' L
  const MatrixXd d_coupling = -wx * theta.transpose();
  VectorXd g(param_count());
  Index k = 0;
  for (Index r = 0; r < dx; ++r)
    for (Index c = 0; c <= r; ++c) g[k++] = d_chol(r, c);
  for (Index r = 0; r < dx; ++r)
    for (Index c = 0; c < dt; ++c) g[k++] = d_coupling(r, c);
  return g;
}

std::unique_ptr<ConditionalEnergy> QuadraticEnergy::clone() const {
  return std::make_unique<QuadraticEnergy>(*this);
}

double QuadraticEnergy::log_normalizer(const VectorXd& theta) const {
  const VectorXd a = coupling_ * theta;
  const VectorXd m = precision().ldlt().solve(a);
  return 0.5 * a.dot(m) - 0.5 * theta.dot(fixed_ * theta);
}

namespace {
nlohmann::json matrix_json(const MatrixXd& m) {
  std::vector<double> v;
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) v.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", v}};
}
MatrixXd matrix_from_json(const nlohmann::json& j) {
  const Index rows = j.at("rows"), cols = j.at("cols");
  const auto v = j.at("data").get<std::vector<double>>();
  if (static_cast<Index>(v.size()) != rows * cols) throw std::invalid_argument("bad matrix json");
  MatrixXd m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = v[static_cast<std::size_t>(r * cols + c)];
  return m;
}
}  // namespace

nlohmann::json QuadraticEnergy::to_json() const {
  return {{"kind", "quadratic"},
          {"chol", matrix_json(chol_)},
          {"coupling", matrix_json(coupling_)},
          {"fixed_theta", matrix_json(fixed_)}};
}

std::unique_ptr<ConditionalEnergy> energy_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind");
  if (kind == "quadratic") {
    return std::make_unique<QuadraticEnergy>(matrix_from_json(j.at("chol")),
                                             matrix_from_json(j.at("coupling")),
                                             matrix_from_json(j.at("fixed_theta")));
  }
  if (kind == "neural") {
    auto e = std::make_unique<NeuralEnergy>(nn::net_from_json(j.at("net")),
                                            j.at("x_dim").get<Index>(),
                                            j.at("theta_dim").get<Index>());
    const auto shift = j.at("input_shift").get<std::vector<double>>();
    const auto scale = j.at("input_scale").get<std::vector<double>>();
    if (static_cast<Index>(shift.size()) != e->input_dim() ||
        static_cast<Index>(scale.size()) != e->input_dim())
      throw std::invalid_argument("standardization size mismatch");
    e->set_standardization(Eigen::Map<const VectorXd>(shift.data(), e->input_dim()),
                           Eigen::Map<const VectorXd>(scale.data(), e->input_dim()));
    return e;
  }
  throw std::invalid_argument("unknown energy kind '" + kind + "'");
}

}  // namespace unle
