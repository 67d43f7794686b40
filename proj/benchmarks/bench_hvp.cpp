#include "sscope/nn.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace {

using namespace sscope;

nn::Batch random_batch(Eigen::Index n, Eigen::Index d, int classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  nn::Batch b;
  b.inputs.resize(n, d);
  for (Eigen::Index i = 0; i < b.inputs.size(); ++i) b.inputs.data()[i] = u(rng);
  for (Eigen::Index i = 0; i < n; ++i) b.labels.push_back(static_cast<std::int32_t>(rng() % classes));
  return b;
}

nn::ModelSpec mnist_spec(std::vector<Eigen::Index> hidden) {
  nn::ModelSpec s;
  s.input_dim = 784;
  s.hidden_widths = std::move(hidden);
  s.num_outputs = 10;
  return s;
}

// args: samples, hidden width (0 = softmax regression)
void BM_Hvp(benchmark::State& state) {
  const Eigen::Index n = state.range(0);
  const Eigen::Index w = state.range(1);
  const auto spec = mnist_spec(w > 0 ? std::vector<Eigen::Index>{w, w} : std::vector<Eigen::Index>{});
  const auto batch = random_batch(n, 784, 10, 1);
  const ParamVector theta = nn::init_params(spec, 2);
  const nn::HessianOperator op(spec, theta, batch);
  const ParamVector v = ParamVector::Random(theta.size());
  for (auto _ : state) benchmark::DoNotOptimize(op.apply(v));
  state.counters["params"] = static_cast<double>(theta.size());
}
BENCHMARK(BM_Hvp)->Args({1000, 0})->Args({10000, 0})->Args({1000, 100})->Args({10000, 100})->Unit(benchmark::kMillisecond);

void BM_OperatorSetup(benchmark::State& state) {
  const auto spec = mnist_spec({100, 100});
  const auto batch = random_batch(state.range(0), 784, 10, 1);
  const ParamVector theta = nn::init_params(spec, 2);
  for (auto _ : state) {
    nn::HessianOperator op(spec, theta, batch);
    benchmark::DoNotOptimize(op.loss());
  }
}
BENCHMARK(BM_OperatorSetup)->Arg(64)->Arg(10000)->Unit(benchmark::kMillisecond);

}  // namespace
