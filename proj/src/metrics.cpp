#include "unle/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "unle/nn.hpp"

namespace unle {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j{{"metric", metric}, {"value", value}, {"n_a", n_a}, {"n_b", n_b}, {"seed", seed}};
  if (!folds.empty()) j["folds"] = folds;
  if (metric == "energy_distance") j["standard_error"] = standard_error;
  return j;
}

namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

void shuffle(std::vector<Index>& v, RandomStream& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

nn::NetParams train_classifier(const MatrixXd& x, const VectorXd& y, const C2stConfig& cfg,
                               RandomStream& rng) {
  const Index d = x.rows(), n = x.cols();
  const int width = cfg.width_factor * static_cast<int>(d);
  const std::vector<int> sizes{static_cast<int>(d), width, width, 1};
  nn::NetParams net = nn::net_init(sizes, nn::Activation::swish, rng);
  nn::AdamState adam = nn::adam_init(net.param_count(), cfg.learning_rate);
  VectorXd params = net.flatten();

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  double best = std::numeric_limits<double>::infinity();
  int stale = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    shuffle(order, rng);
    double total = 0.0;
    for (Index start = 0; start < n; start += cfg.batch_size) {
      const Index bs = std::min<Index>(cfg.batch_size, n - start);
      MatrixXd xb(d, bs);
      VectorXd yb(bs);
      for (Index k = 0; k < bs; ++k) {
        const Index i = order[static_cast<std::size_t>(start + k)];
        xb.col(k) = x.col(i);
        yb[k] = y[i];
      }
      const VectorXd f = nn::forward_batch(net, xb).row(0).transpose();
      VectorXd w(bs);
      for (Index k = 0; k < bs; ++k) {
        total += softplus(f[k]) - yb[k] * f[k];
        w[k] = (sigmoid(f[k]) - yb[k]) / static_cast<double>(bs);
      }
      nn::adam_step(adam, params, nn::weighted_param_grad(net, xb, w));
      net.assign(params);
    }
    const double loss = total / static_cast<double>(n);
    if (loss < best - cfg.tol) {
      best = loss;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  return net;
}

}  // namespace

MetricReport c2st(const MatrixXd& a, const MatrixXd& b, const RandomStream& rng,
                  const C2stConfig& cfg) {
  if (a.rows() != b.rows()) throw std::invalid_argument("c2st: samples differ in dimension");
  if (cfg.folds < 2) throw std::invalid_argument("c2st: need at least two folds");
  if (a.cols() < cfg.folds || b.cols() < cfg.folds)
    throw std::invalid_argument("c2st: too few samples for the number of folds");
  if (!a.allFinite() || !b.allFinite()) throw std::invalid_argument("c2st: non-finite samples");
  const Index d = a.rows(), n = a.cols() + b.cols();

  MatrixXd x(d, n);
  x << a, b;
  VectorXd y(n);
  y.head(a.cols()).setZero();
  y.tail(b.cols()).setOnes();
  const VectorXd mean = x.rowwise().mean();
  x.colwise() -= mean;
  VectorXd sd = (x.array().square().rowwise().sum() / static_cast<double>(n - 1)).sqrt().matrix();
  for (Index k = 0; k < d; ++k)
    if (!(sd[k] > 0.0)) sd[k] = 1.0;
  x = (x.array().colwise() / sd.array()).matrix();

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  RandomStream perm = rng.child(0);
  shuffle(order, perm);

  MetricReport rep;
  rep.metric = "c2st";
  rep.n_a = a.cols();
  rep.n_b = b.cols();
  rep.seed = rng.key();
  for (int fold = 0; fold < cfg.folds; ++fold) {
    std::vector<Index> train, test;
    for (Index k = 0; k < n; ++k)
      (k % cfg.folds == fold ? test : train).push_back(order[static_cast<std::size_t>(k)]);
    MatrixXd xt(d, static_cast<Index>(train.size()));
    VectorXd yt(static_cast<Index>(train.size()));
    for (std::size_t k = 0; k < train.size(); ++k) {
      xt.col(static_cast<Index>(k)) = x.col(train[k]);
      yt[static_cast<Index>(k)] = y[train[k]];
    }
    RandomStream fold_rng = rng.child(1).child(static_cast<std::uint64_t>(fold));
    const nn::NetParams net = train_classifier(xt, yt, cfg, fold_rng);
    MatrixXd xs(d, static_cast<Index>(test.size()));
    for (std::size_t k = 0; k < test.size(); ++k) xs.col(static_cast<Index>(k)) = x.col(test[k]);
    const VectorXd f = nn::forward_batch(net, xs).row(0).transpose();
    Index correct = 0;
    for (std::size_t k = 0; k < test.size(); ++k)
      if ((f[static_cast<Index>(k)] > 0.0) == (y[test[k]] > 0.5)) ++correct;
    rep.folds.push_back(static_cast<double>(correct) / static_cast<double>(test.size()));
  }
  rep.value = std::accumulate(rep.folds.begin(), rep.folds.end(), 0.0) /
              static_cast<double>(rep.folds.size());
  return rep;
}

// ---------------------------------------------------------------------------

namespace {

MatrixXd sorted_columns(const MatrixXd& m) {
  std::vector<Index> idx(static_cast<std::size_t>(m.cols()));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::stable_sort(idx.begin(), idx.end(), [&](Index i, Index j) {
    for (Index k = 0; k < m.rows(); ++k) {
      if (m(k, i) < m(k, j)) return true;
      if (m(k, j) < m(k, i)) return false;
    }
    return false;
  });
  MatrixXd out(m.rows(), m.cols());
  for (Index c = 0; c < m.cols(); ++c) out.col(c) = m.col(idx[static_cast<std::size_t>(c)]);
  return out;
}

double variance(const VectorXd& v) {
  if (v.size() < 2) return 0.0;
  return (v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1);
}

// Row sums of distances from each column of p to every column of q, skipping
// the matched index when `skip_diagonal`.
VectorXd distance_row_sums(const MatrixXd& p, const MatrixXd& q, bool skip_diagonal) {
  VectorXd out(p.cols());
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < p.cols(); ++i) {
    double s = 0.0;
    for (Index j = 0; j < q.cols(); ++j) {
      if (skip_diagonal && i == j) continue;
      s += (p.col(i) - q.col(j)).norm();
    }
    out[i] = s;
  }
  return out;
}

}  // namespace

MetricReport energy_distance(const MatrixXd& a_in, const MatrixXd& b_in) {
  if (a_in.rows() != b_in.rows()) throw std::invalid_argument("energy_distance: dimension mismatch");
  if (a_in.cols() < 2 || b_in.cols() < 2)
    throw std::invalid_argument("energy_distance: need at least two samples per side");
  const MatrixXd a = sorted_columns(a_in), b = sorted_columns(b_in);
  const Index na = a.cols(), nb = b.cols();
  MetricReport rep;
  rep.metric = "energy_distance";
  rep.n_a = na;
  rep.n_b = nb;

  const VectorXd aa = distance_row_sums(a, a, true);
  const VectorXd bb = distance_row_sums(b, b, true);
  if (na == nb) {
    const VectorXd ab = distance_row_sums(a, b, true);
    const VectorXd ba = distance_row_sums(b, a, true);
    const VectorXd h = ab + ba - aa - bb;
    double total = 0.0;
    for (Index i = 0; i < na; ++i) total += h[i];
    const double pairs = static_cast<double>(na) * static_cast<double>(na - 1);
    rep.value = total / pairs;
    // The rank pairing makes a_i and b_i dependent, so the error comes from
    // the projections onto each sample separately.
    VectorXd matched(na);
    for (Index i = 0; i < na; ++i) matched[i] = (a.col(i) - b.col(i)).norm();
    const double f = static_cast<double>(na);
    const VectorXd ga = 2.0 * (ab + matched) / f - 2.0 * aa / (f - 1.0);
    const VectorXd gb = 2.0 * (ba + matched) / f - 2.0 * bb / (f - 1.0);
    rep.standard_error = std::sqrt(variance(ga) / f + variance(gb) / f);
    return rep;
  }
  const VectorXd ab = distance_row_sums(a, b, false);
  const VectorXd ba = distance_row_sums(b, a, false);
  double s_ab = 0.0, s_aa = 0.0, s_bb = 0.0;
  for (Index i = 0; i < na; ++i) {
    s_ab += ab[i];
    s_aa += aa[i];
  }
  for (Index j = 0; j < nb; ++j) s_bb += bb[j];
  const double fa = static_cast<double>(na), fb = static_cast<double>(nb);
  rep.value = 2.0 * s_ab / (fa * fb) - s_aa / (fa * (fa - 1.0)) - s_bb / (fb * (fb - 1.0));
  const VectorXd ga = 2.0 * ab / fb - 2.0 * aa / (fa - 1.0);
  const VectorXd gb = 2.0 * ba / fa - 2.0 * bb / (fb - 1.0);
  rep.standard_error = std::sqrt(variance(ga) / fa + variance(gb) / fb);
  return rep;
}

double energy_distance_null_quantile(const MatrixXd& a, const MatrixXd& b, int permutations,
                                     double q, const RandomStream& rng) {
  if (permutations < 1 || !(q > 0.0 && q < 1.0))
    throw std::invalid_argument("energy_distance_null_quantile: bad arguments");
  if (a.rows() != b.rows()) throw std::invalid_argument("energy_distance: dimension mismatch");
  MatrixXd pooled(a.rows(), a.cols() + b.cols());
  pooled << a, b;
  std::vector<double> stats;
  std::vector<Index> order(static_cast<std::size_t>(pooled.cols()));
  for (int p = 0; p < permutations; ++p) {
    std::iota(order.begin(), order.end(), Index{0});
    RandomStream s = rng.child(static_cast<std::uint64_t>(p));
    shuffle(order, s);
    MatrixXd pa(a.rows(), a.cols()), pb(b.rows(), b.cols());
    for (Index i = 0; i < a.cols(); ++i) pa.col(i) = pooled.col(order[static_cast<std::size_t>(i)]);
    for (Index j = 0; j < b.cols(); ++j)
      pb.col(j) = pooled.col(order[static_cast<std::size_t>(a.cols() + j)]);
    stats.push_back(energy_distance(pa, pb).value);
  }
  std::sort(stats.begin(), stats.end());
  const std::size_t k = std::min(stats.size() - 1,
                                 static_cast<std::size_t>(std::ceil(q * static_cast<double>(stats.size()))) - 1);
  return stats[k];
}

// ---------------------------------------------------------------------------

MatrixXd Grid2D::centers() const {
  MatrixXd c(2, static_cast<Index>(nx) * ny);
  const double dx = (x_hi - x_lo) / nx, dy = (y_hi - y_lo) / ny;
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      c(0, static_cast<Index>(j) * nx + i) = x_lo + (i + 0.5) * dx;
      c(1, static_cast<Index>(j) * nx + i) = y_lo + (j + 0.5) * dy;
    }
  return c;
}

VectorXd grid_probabilities(const std::function<VectorXd(const MatrixXd&)>& logp,
                            const Grid2D& grid) {
  VectorXd lp = logp(grid.centers());
  const double m = lp.maxCoeff();
  if (!std::isfinite(m)) throw std::invalid_argument("grid_probabilities: no finite density on the grid");
  VectorXd p = (lp.array() - m).exp().matrix();
  for (Index i = 0; i < p.size(); ++i)
    if (!std::isfinite(p[i])) p[i] = 0.0;
  return p / p.sum();
}

VectorXd smooth_grid(const VectorXd& probs, const Grid2D& grid, double bandwidth) {
  if (probs.size() != static_cast<Index>(grid.nx) * grid.ny)
    throw std::invalid_argument("smooth_grid: size mismatch");
  const double dx = (grid.x_hi - grid.x_lo) / grid.nx, dy = (grid.y_hi - grid.y_lo) / grid.ny;
  auto kernel = [bandwidth](int n, double step) {
    MatrixXd k(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double u = (i - j) * step / bandwidth;
        k(i, j) = std::exp(-0.5 * u * u);
      }
    return k;
  };
  const MatrixXd kx = kernel(grid.nx, dx), ky = kernel(grid.ny, dy);
  const Eigen::Map<const MatrixXd> p(probs.data(), grid.nx, grid.ny);
  const MatrixXd s = kx * p * ky.transpose();
  VectorXd out = Eigen::Map<const VectorXd>(s.data(), s.size());
  return out / out.sum();
}

VectorXd kde_grid(const MatrixXd& samples, const Grid2D& grid, double bandwidth) {
  if (samples.rows() != 2 || samples.cols() < 1) throw std::invalid_argument("kde_grid: need 2-D samples");
  const MatrixXd c = grid.centers();
  VectorXd out(c.cols());
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < c.cols(); ++i) {
    double s = 0.0;
    for (Index j = 0; j < samples.cols(); ++j)
      s += std::exp(-0.5 * (c.col(i) - samples.col(j)).squaredNorm() / (bandwidth * bandwidth));
    out[i] = s;
  }
  return out / out.sum();
}

double total_variation(const VectorXd& p, const VectorXd& q) {
  if (p.size() != q.size()) throw std::invalid_argument("total_variation: size mismatch");
  return 0.5 * (p - q).cwiseAbs().sum();
}

}  // namespace unle
