#include "unle/nn.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace unle::nn {

using Eigen::ArrayXXd;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::swish: return "swish";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "?";
}

Activation activation_from_string(std::string_view name) {
  if (name == "swish") return Activation::swish;
  if (name == "tanh") return Activation::tanh;
  if (name == "identity") return Activation::identity;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

Index NetParams::input_dim() const {
  return layers.empty() ? 0 : layers.front().weight.cols();
}

Index NetParams::output_dim() const {
  return layers.empty() ? 0 : layers.back().weight.rows();
}

Index NetParams::param_count() const {
  Index n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

std::vector<int> NetParams::layer_sizes() const {
  std::vector<int> sizes;
  if (layers.empty()) return sizes;
  sizes.push_back(static_cast<int>(layers.front().weight.cols()));
  for (const auto& l : layers) sizes.push_back(static_cast<int>(l.weight.rows()));
  return sizes;
}

VectorXd NetParams::flatten() const {
  VectorXd flat(param_count());
  Index k = 0;
  for (const auto& l : layers) {
    for (Index r = 0; r < l.weight.rows(); ++r)
      for (Index c = 0; c < l.weight.cols(); ++c) flat[k++] = l.weight(r, c);
    for (Index r = 0; r < l.bias.size(); ++r) flat[k++] = l.bias[r];
  }
  return flat;
}

void NetParams::assign(const VectorXd& flat) {
  if (flat.size() != param_count())
    throw std::invalid_argument("flat parameter vector has wrong length");
  Index k = 0;
  for (auto& l : layers) {
    for (Index r = 0; r < l.weight.rows(); ++r)
      for (Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = flat[k++];
    for (Index r = 0; r < l.bias.size(); ++r) l.bias[r] = flat[k++];
  }
}

void NetParams::validate() const {
  if (layers.empty()) throw std::invalid_argument("network has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.weight.rows() < 1 || l.weight.cols() < 1)
      throw std::invalid_argument("empty weight matrix in layer " + std::to_string(i));
    if (l.bias.size() != l.weight.rows())
      throw std::invalid_argument("bias size mismatch in layer " + std::to_string(i));
    if (i > 0 && l.weight.cols() != layers[i - 1].weight.rows())
      throw std::invalid_argument("layer " + std::to_string(i) +
                                  " input dim does not match previous output dim");
    if (!l.weight.allFinite() || !l.bias.allFinite())
      throw std::invalid_argument("non-finite parameter in layer " + std::to_string(i));
  }
}

NetParams net_init(std::span<const int> layer_sizes, Activation activation,
                   RandomStream& rng) {
  if (layer_sizes.size() < 2)
    throw std::invalid_argument("net_init needs at least input and output sizes");
  for (int s : layer_sizes)
    if (s < 1) throw std::invalid_argument("layer sizes must be positive");

  NetParams p;
  p.activation = activation;
  for (std::size_t i = 0; i + 1 < layer_sizes.size(); ++i) {
    const int fan_in = layer_sizes[i];
    const int fan_out = layer_sizes[i + 1];
    const double scale = std::sqrt(2.0 / fan_in);
    DenseLayer l;
    l.weight.resize(fan_out, fan_in);
    for (Index r = 0; r < fan_out; ++r)
      for (Index c = 0; c < fan_in; ++c) l.weight(r, c) = scale * rng.normal();
    l.bias = VectorXd::Zero(fan_out);
    p.layers.push_back(std::move(l));
  }
  return p;
}

namespace {

ArrayXXd act(Activation a, const ArrayXXd& z) {
  switch (a) {
    case Activation::swish: return z * (1.0 + (-z).exp()).inverse();
    case Activation::tanh: return z.tanh();
    case Activation::identity: return z;
  }
  return z;
}

ArrayXXd act_d1(Activation a, const ArrayXXd& z) {
  switch (a) {
    case Activation::swish: {
      const ArrayXXd s = (1.0 + (-z).exp()).inverse();
      return s + z * s * (1.0 - s);
    }
    case Activation::tanh: {
      const ArrayXXd t = z.tanh();
      return 1.0 - t * t;
    }
    case Activation::identity: return ArrayXXd::Ones(z.rows(), z.cols());
  }
  return z;
}

ArrayXXd act_d2(Activation a, const ArrayXXd& z) {
  switch (a) {
    case Activation::swish: {
      const ArrayXXd s = (1.0 + (-z).exp()).inverse();
      const ArrayXXd ds = s * (1.0 - s);
      return 2.0 * ds + z * ds * (1.0 - 2.0 * s);
    }
    case Activation::tanh: {
      const ArrayXXd t = z.tanh();
      return -2.0 * t * (1.0 - t * t);
    }
    case Activation::identity: return ArrayXXd::Zero(z.rows(), z.cols());
  }
  return z;
}

// Hidden pre-activations and activations for one chunk; post[0] is the input.
struct Trace {
  std::vector<MatrixXd> pre;
  std::vector<MatrixXd> post;
  MatrixXd out;
};

void forward_chunk(const NetParams& p, const Eigen::Ref<const MatrixXd>& in, Trace& t) {
  const std::size_t n_hidden = p.layers.size() - 1;
  t.pre.resize(n_hidden);
  t.post.resize(n_hidden + 1);
  t.post[0] = in;
  for (std::size_t l = 0; l < n_hidden; ++l) {
    const auto& layer = p.layers[l];
    t.pre[l] = (layer.weight * t.post[l]).colwise() + layer.bias;
    t.post[l + 1] = act(p.activation, t.pre[l].array()).matrix();
  }
  const auto& last = p.layers.back();
  t.out = (last.weight * t.post[n_hidden]).colwise() + last.bias;
}

void check_input(const NetParams& p, Index rows) {
  if (p.layers.empty()) throw std::invalid_argument("network has no layers");
  if (rows != p.input_dim())
    throw std::invalid_argument("input dimension " + std::to_string(rows) +
                                " does not match network input " +
                                std::to_string(p.input_dim()));
}

void check_scalar(const NetParams& p) {
  if (p.output_dim() != 1)
    throw std::invalid_argument("gradient requires a scalar-output network");
}

Index n_chunks(Index cols) { return (cols + kChunkColumns - 1) / kChunkColumns; }

// Writes per-layer gradient blocks into a flat vector (row-major weights).
class FlatGrad {
 public:
  explicit FlatGrad(const NetParams& p) : p_(p), flat_(VectorXd::Zero(p.param_count())) {
    Index k = 0;
    for (const auto& l : p.layers) {
      offsets_.push_back(k);
      k += l.weight.size() + l.bias.size();
    }
  }
  void add_weight(std::size_t l, const MatrixXd& dw) {
    Index k = offsets_[l];
    for (Index r = 0; r < dw.rows(); ++r)
      for (Index c = 0; c < dw.cols(); ++c) flat_[k++] += dw(r, c);
  }
  void add_bias(std::size_t l, const VectorXd& db) {
    const Index k = offsets_[l] + p_.layers[l].weight.size();
    flat_.segment(k, db.size()) += db;
  }
  VectorXd& flat() { return flat_; }

 private:
  const NetParams& p_;
  VectorXd flat_;
  std::vector<Index> offsets_;
};

template <class ChunkFn>
VectorXd reduce_chunks(const NetParams& p, Index cols, ChunkFn&& fn) {
  const Index nc = n_chunks(cols);
  std::vector<VectorXd> partial(static_cast<std::size_t>(nc));
#pragma omp parallel for schedule(static)
  for (Index c = 0; c < nc; ++c) {
    const Index begin = c * kChunkColumns;
    const Index width = std::min(kChunkColumns, cols - begin);
    FlatGrad g(p);
    fn(begin, width, g);
    partial[static_cast<std::size_t>(c)] = std::move(g.flat());
  }
  VectorXd total = VectorXd::Zero(p.param_count());
  for (const auto& part : partial) total += part;
  return total;
}

}  // namespace

MatrixXd forward_batch(const NetParams& p, const MatrixXd& inputs) {
  check_input(p, inputs.rows());
  const Index cols = inputs.cols();
  MatrixXd out(p.output_dim(), cols);
  const Index nc = n_chunks(cols);
#pragma omp parallel for schedule(static)
  for (Index c = 0; c < nc; ++c) {
    const Index begin = c * kChunkColumns;
    const Index width = std::min(kChunkColumns, cols - begin);
    Trace t;
    forward_chunk(p, inputs.middleCols(begin, width), t);
    out.middleCols(begin, width) = t.out;
  }
  return out;
}

void value_and_input_grad_batch(const NetParams& p, const MatrixXd& inputs,
                                VectorXd& values, MatrixXd& input_grads) {
  check_input(p, inputs.rows());
  check_scalar(p);
  const Index cols = inputs.cols();
  values.resize(cols);
  input_grads.resize(inputs.rows(), cols);
  const Index nc = n_chunks(cols);
  const std::size_t n_hidden = p.layers.size() - 1;
#pragma omp parallel for schedule(static)
  for (Index c = 0; c < nc; ++c) {
    const Index begin = c * kChunkColumns;
    const Index width = std::min(kChunkColumns, cols - begin);
    Trace t;
    forward_chunk(p, inputs.middleCols(begin, width), t);
    values.segment(begin, width) = t.out.row(0).transpose();
    MatrixXd g = p.layers.back().weight.transpose().replicate(1, width);
    for (std::size_t l = n_hidden; l-- > 0;) {
      const MatrixXd delta = (g.array() * act_d1(p.activation, t.pre[l].array())).matrix();
      g = p.layers[l].weight.transpose() * delta;
    }
    input_grads.middleCols(begin, width) = g;
  }
}

VectorXd weighted_param_grad(const NetParams& p, const MatrixXd& inputs,
                             const VectorXd& weights) {
  check_input(p, inputs.rows());
  check_scalar(p);
  if (weights.size() != inputs.cols())
    throw std::invalid_argument("weights length must equal the number of inputs");
  const std::size_t n_hidden = p.layers.size() - 1;
  return reduce_chunks(p, inputs.cols(), [&](Index begin, Index width, FlatGrad& g) {
    Trace t;
    forward_chunk(p, inputs.middleCols(begin, width), t);
    MatrixXd delta = weights.segment(begin, width).transpose();
    for (std::size_t l = n_hidden + 1; l-- > 0;) {
      g.add_weight(l, delta * t.post[l].transpose());
      g.add_bias(l, delta.rowwise().sum());
      if (l == 0) break;
      const MatrixXd back = p.layers[l].weight.transpose() * delta;
      delta = (back.array() * act_d1(p.activation, t.pre[l - 1].array())).matrix();
    }
  });
}

VectorXd weighted_input_grad_param_grad(const NetParams& p, const MatrixXd& inputs,
                                        const MatrixXd& directions,
                                        const VectorXd& weights) {
  check_input(p, inputs.rows());
  check_scalar(p);
  if (directions.rows() != inputs.rows() || directions.cols() != inputs.cols())
    throw std::invalid_argument("directions must have the shape of inputs");
  if (weights.size() != inputs.cols())
    throw std::invalid_argument("weights length must equal the number of inputs");
  const std::size_t n_hidden = p.layers.size() - 1;
  return reduce_chunks(p, inputs.cols(), [&](Index begin, Index width, FlatGrad& g) {
    // Primal and tangent (along `directions`) forward pass.
    Trace t;
    forward_chunk(p, inputs.middleCols(begin, width), t);
    std::vector<MatrixXd> tan_pre(n_hidden), tan_post(n_hidden + 1);
    std::vector<ArrayXXd> d1(n_hidden);
    tan_post[0] = directions.middleCols(begin, width);
    for (std::size_t l = 0; l < n_hidden; ++l) {
      tan_pre[l] = p.layers[l].weight * tan_post[l];
      d1[l] = act_d1(p.activation, t.pre[l].array());
      tan_post[l + 1] = (d1[l] * tan_pre[l].array()).matrix();
    }
    // Reverse pass over the objective sum_b w_b * tangent_out_b.
    const MatrixXd w = weights.segment(begin, width).transpose();
    g.add_weight(n_hidden, w * tan_post[n_hidden].transpose());
    MatrixXd adj_tan = p.layers[n_hidden].weight.transpose() * w;
    MatrixXd adj_val = MatrixXd::Zero(adj_tan.rows(), width);
    for (std::size_t l = n_hidden; l-- > 0;) {
      const ArrayXXd d2 = act_d2(p.activation, t.pre[l].array());
      const MatrixXd adj_tan_pre = (adj_tan.array() * d1[l]).matrix();
      const MatrixXd adj_pre =
          (adj_tan.array() * d2 * tan_pre[l].array() + adj_val.array() * d1[l]).matrix();
      g.add_weight(l, adj_tan_pre * tan_post[l].transpose() + adj_pre * t.post[l].transpose());
      g.add_bias(l, adj_pre.rowwise().sum());
      if (l == 0) break;
      adj_tan = p.layers[l].weight.transpose() * adj_tan_pre;
      adj_val = p.layers[l].weight.transpose() * adj_pre;
    }
  });
}

VectorXd net_forward(const NetParams& p, const VectorXd& input) {
  return forward_batch(p, input).col(0);
}

VectorXd net_grad_params(const NetParams& p, const VectorXd& input) {
  return weighted_param_grad(p, input, VectorXd::Ones(1));
}

VectorXd net_grad_input(const NetParams& p, const VectorXd& input) {
  VectorXd values;
  MatrixXd grads;
  value_and_input_grad_batch(p, input, values, grads);
  return grads.col(0);
}

AdamState adam_init(Index n_params, double learning_rate) {
  AdamState s;
  s.m = VectorXd::Zero(n_params);
  s.v = VectorXd::Zero(n_params);
  s.learning_rate = learning_rate;
  return s;
}

void adam_step(AdamState& s, VectorXd& params, const VectorXd& grad) {
  if (params.size() != s.m.size() || grad.size() != s.m.size())
    throw std::invalid_argument("Adam state, parameters and gradient must have equal size");
  ++s.step;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * grad;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  params.array() -= s.learning_rate * (s.m.array() / c1) /
                    ((s.v.array() / c2).sqrt() + s.epsilon);
}

nlohmann::json to_json(const NetParams& p) {
  nlohmann::json j;
  j["format"] = "unle.netparams";
  j["version"] = 1;
  j["activation"] = std::string(to_string(p.activation));
  j["layer_sizes"] = p.layer_sizes();
  auto layers = nlohmann::json::array();
  for (const auto& l : p.layers) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(l.weight.size()));
    for (Index r = 0; r < l.weight.rows(); ++r)
      for (Index c = 0; c < l.weight.cols(); ++c) w.push_back(l.weight(r, c));
    std::vector<double> b(l.bias.data(), l.bias.data() + l.bias.size());
    layers.push_back({{"weight", w}, {"bias", b}});
  }
  j["layers"] = layers;
  return j;
}

NetParams net_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "unle.netparams")
    throw std::invalid_argument("not a serialized network");
  const auto sizes = j.at("layer_sizes").get<std::vector<int>>();
  const auto& layers = j.at("layers");
  if (sizes.size() < 2 || layers.size() != sizes.size() - 1)
    throw std::invalid_argument("layer_sizes does not match the stored layers");
  NetParams p;
  p.activation = activation_from_string(j.at("activation").get<std::string>());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto w = layers[i].at("weight").get<std::vector<double>>();
    const auto b = layers[i].at("bias").get<std::vector<double>>();
    const Index out = sizes[i + 1], in = sizes[i];
    if (static_cast<Index>(w.size()) != out * in || static_cast<Index>(b.size()) != out)
      throw std::invalid_argument("serialized layer " + std::to_string(i) + " has wrong size");
    DenseLayer l;
    l.weight.resize(out, in);
    for (Index r = 0; r < out; ++r)
      for (Index c = 0; c < in; ++c) l.weight(r, c) = w[static_cast<std::size_t>(r * in + c)];
    l.bias = Eigen::Map<const VectorXd>(b.data(), out);
    p.layers.push_back(std::move(l));
  }
  p.validate();
  return p;
}

}  // namespace unle::nn
