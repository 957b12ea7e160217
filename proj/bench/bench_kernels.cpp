// Serial reference kernels vs. the batched OpenMP kernels on the default
// energy network (4 x 50 swish) over a cloud of particles.

#include <benchmark/benchmark.h>

#include <array>
#include <vector>

#include "unle/nn.hpp"
#include "unle/nn_reference.hpp"
#include "unle/rng.hpp"

namespace {

using namespace unle;

constexpr int kInput = 4;

nn::NetParams make_net() {
  RandomStream rng(7);
  const std::array<int, 6> sizes{kInput, 50, 50, 50, 50, 1};
  return nn::net_init(sizes, nn::Activation::swish, rng);
}

Eigen::MatrixXd make_inputs(Eigen::Index n) {
  RandomStream rng(11);
  Eigen::MatrixXd x(kInput, n);
  for (Eigen::Index c = 0; c < n; ++c) x.col(c) = rng.normal_vector(kInput);
  return x;
}

std::vector<std::vector<double>> as_vectors(const Eigen::MatrixXd& x) {
  std::vector<std::vector<double>> out;
  for (Eigen::Index c = 0; c < x.cols(); ++c) out.emplace_back(x.col(c).data(), x.col(c).data() + x.rows());
  return out;
}

void BM_ForwardReference(benchmark::State& state) {
  const auto net = make_net();
  const auto xs = as_vectors(make_inputs(state.range(0)));
  for (auto _ : state)
    for (const auto& x : xs) benchmark::DoNotOptimize(nn::reference::forward(net, x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ForwardBatched(benchmark::State& state) {
  const auto net = make_net();
  const auto x = make_inputs(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(nn::forward_batch(net, x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_InputGradReference(benchmark::State& state) {
  const auto net = make_net();
  const auto xs = as_vectors(make_inputs(state.range(0)));
  for (auto _ : state)
    for (const auto& x : xs) {
      benchmark::DoNotOptimize(nn::reference::forward(net, x));
      benchmark::DoNotOptimize(nn::reference::grad_input(net, x));
    }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_InputGradBatched(benchmark::State& state) {
  const auto net = make_net();
  const auto x = make_inputs(state.range(0));
  Eigen::VectorXd v;
  Eigen::MatrixXd g;
  for (auto _ : state) {
    nn::value_and_input_grad_batch(net, x, v, g);
    benchmark::DoNotOptimize(g.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ParamGradReference(benchmark::State& state) {
  const auto net = make_net();
  const auto xs = as_vectors(make_inputs(state.range(0)));
  for (auto _ : state) {
    std::vector<double> total(static_cast<std::size_t>(net.param_count()), 0.0);
    for (const auto& x : xs) {
      const auto g = nn::reference::grad_params(net, x);
      for (std::size_t i = 0; i < g.size(); ++i) total[i] += g[i];
    }
    benchmark::DoNotOptimize(total.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ParamGradBatched(benchmark::State& state) {
  const auto net = make_net();
  const auto x = make_inputs(state.range(0));
  const Eigen::VectorXd w = Eigen::VectorXd::Ones(x.cols());
  for (auto _ : state) benchmark::DoNotOptimize(nn::weighted_param_grad(net, x, w));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_ForwardReference)->Arg(64)->Arg(1000)->Arg(10000);
BENCHMARK(BM_ForwardBatched)->Arg(64)->Arg(1000)->Arg(10000);
BENCHMARK(BM_InputGradReference)->Arg(64)->Arg(1000)->Arg(10000);
BENCHMARK(BM_InputGradBatched)->Arg(64)->Arg(1000)->Arg(10000);
BENCHMARK(BM_ParamGradReference)->Arg(64)->Arg(1000)->Arg(10000);
BENCHMARK(BM_ParamGradBatched)->Arg(64)->Arg(1000)->Arg(10000);

BENCHMARK_MAIN();
