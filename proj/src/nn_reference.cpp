#include "unle/nn_reference.hpp"

#include <cmath>
#include <stdexcept>

namespace unle::nn::reference {

namespace {

using Vec = std::vector<double>;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double act(Activation a, double z) {
  switch (a) {
    case Activation::swish: return z * sigmoid(z);
    case Activation::tanh: return std::tanh(z);
    case Activation::identity: return z;
  }
  return z;
}

double act_d1(Activation a, double z) {
  switch (a) {
    case Activation::swish: {
      const double s = sigmoid(z);
      return s + z * s * (1.0 - s);
    }
    case Activation::tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    case Activation::identity: return 1.0;
  }
  return 1.0;
}

double act_d2(Activation a, double z) {
  switch (a) {
    case Activation::swish: {
      const double s = sigmoid(z);
      return 2.0 * s * (1.0 - s) + z * s * (1.0 - s) * (1.0 - 2.0 * s);
    }
    case Activation::tanh: {
      const double t = std::tanh(z);
      return -2.0 * t * (1.0 - t * t);
    }
    case Activation::identity: return 0.0;
  }
  return 0.0;
}

Vec affine(const DenseLayer& l, const Vec& in, bool with_bias) {
  Vec out(static_cast<std::size_t>(l.weight.rows()));
  for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
    double s = with_bias ? l.bias[r] : 0.0;
    for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
      s += l.weight(r, c) * in[static_cast<std::size_t>(c)];
    out[static_cast<std::size_t>(r)] = s;
  }
  return out;
}

Vec transpose_apply(const DenseLayer& l, const Vec& v) {
  Vec out(static_cast<std::size_t>(l.weight.cols()), 0.0);
  for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
    for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
      out[static_cast<std::size_t>(c)] += l.weight(r, c) * v[static_cast<std::size_t>(r)];
  return out;
}

struct Pass {
  std::vector<Vec> pre;   // hidden pre-activations
  std::vector<Vec> post;  // post[0] = input
  Vec out;
};

Pass run(const NetParams& p, const Vec& input) {
  if (static_cast<Eigen::Index>(input.size()) != p.input_dim())
    throw std::invalid_argument("input dimension mismatch");
  Pass s;
  s.post.push_back(input);
  for (std::size_t l = 0; l + 1 < p.layers.size(); ++l) {
    Vec z = affine(p.layers[l], s.post.back(), true);
    Vec a(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) a[i] = act(p.activation, z[i]);
    s.pre.push_back(std::move(z));
    s.post.push_back(std::move(a));
  }
  s.out = affine(p.layers.back(), s.post.back(), true);
  return s;
}

// Flat offsets of each layer's weights.
std::vector<std::size_t> offsets(const NetParams& p) {
  std::vector<std::size_t> o;
  std::size_t k = 0;
  for (const auto& l : p.layers) {
    o.push_back(k);
    k += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  }
  return o;
}

void add_outer(Vec& flat, std::size_t offset, const Vec& delta, const Vec& in) {
  for (std::size_t r = 0; r < delta.size(); ++r)
    for (std::size_t c = 0; c < in.size(); ++c) flat[offset + r * in.size() + c] += delta[r] * in[c];
}

void add_bias(Vec& flat, std::size_t offset, std::size_t wsize, const Vec& delta) {
  for (std::size_t r = 0; r < delta.size(); ++r) flat[offset + wsize + r] += delta[r];
}

void require_scalar(const NetParams& p) {
  if (p.output_dim() != 1) throw std::invalid_argument("scalar-output network required");
}

}  // namespace

Vec forward(const NetParams& p, const Vec& input) { return run(p, input).out; }

Vec grad_params(const NetParams& p, const Vec& input) {
  require_scalar(p);
  const Pass s = run(p, input);
  const auto off = offsets(p);
  Vec flat(static_cast<std::size_t>(p.param_count()), 0.0);
  Vec delta{1.0};
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    const auto wsize = static_cast<std::size_t>(p.layers[l].weight.size());
    add_outer(flat, off[l], delta, s.post[l]);
    add_bias(flat, off[l], wsize, delta);
    if (l == 0) break;
    Vec back = transpose_apply(p.layers[l], delta);
    for (std::size_t i = 0; i < back.size(); ++i) back[i] *= act_d1(p.activation, s.pre[l - 1][i]);
    delta = std::move(back);
  }
  return flat;
}

Vec grad_input(const NetParams& p, const Vec& input) {
  require_scalar(p);
  const Pass s = run(p, input);
  Vec g = transpose_apply(p.layers.back(), Vec{1.0});
  for (std::size_t l = p.layers.size() - 1; l-- > 0;) {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= act_d1(p.activation, s.pre[l][i]);
    g = transpose_apply(p.layers[l], g);
  }
  return g;
}

Vec input_grad_param_grad(const NetParams& p, const Vec& input, const Vec& direction) {
  require_scalar(p);
  if (direction.size() != input.size()) throw std::invalid_argument("direction size mismatch");
  const Pass s = run(p, input);
  const std::size_t n_hidden = p.layers.size() - 1;
  std::vector<Vec> tpre(n_hidden), tpost(n_hidden + 1);
  tpost[0] = direction;
  for (std::size_t l = 0; l < n_hidden; ++l) {
    tpre[l] = affine(p.layers[l], tpost[l], false);
    tpost[l + 1].resize(tpre[l].size());
    for (std::size_t i = 0; i < tpre[l].size(); ++i)
      tpost[l + 1][i] = act_d1(p.activation, s.pre[l][i]) * tpre[l][i];
  }
  const auto off = offsets(p);
  Vec flat(static_cast<std::size_t>(p.param_count()), 0.0);
  add_outer(flat, off[n_hidden], Vec{1.0}, tpost[n_hidden]);
  Vec adj_t = transpose_apply(p.layers[n_hidden], Vec{1.0});
  Vec adj_a(adj_t.size(), 0.0);
  for (std::size_t l = n_hidden; l-- > 0;) {
    const std::size_t n = s.pre[l].size();
    Vec adj_tpre(n), adj_pre(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double z = s.pre[l][i];
      adj_tpre[i] = adj_t[i] * act_d1(p.activation, z);
      adj_pre[i] = adj_t[i] * act_d2(p.activation, z) * tpre[l][i] + adj_a[i] * act_d1(p.activation, z);
    }
    const auto wsize = static_cast<std::size_t>(p.layers[l].weight.size());
    add_outer(flat, off[l], adj_tpre, tpost[l]);
    add_outer(flat, off[l], adj_pre, s.post[l]);
    add_bias(flat, off[l], wsize, adj_pre);
    adj_t = transpose_apply(p.layers[l], adj_tpre);
    adj_a = transpose_apply(p.layers[l], adj_pre);
  }
  return flat;
}

}  // namespace unle::nn::reference
