#include "sscope/eigensolver.hpp"

#include <Eigen/QR>
#include <benchmark/benchmark.h>

namespace {

using namespace sscope;

// Top-m eigenpairs of Q diag(lambda) Q^T with lambda_i = 1 / i.
void BM_LanczosDense(benchmark::State& state) {
  const Eigen::Index p = state.range(0);
  const Eigen::Index m = state.range(1);
  std::srand(3);
  const Matrix q = Eigen::HouseholderQR<Matrix>(Matrix::Random(p, p)).householderQ();
  Vector lambda(p);
  for (Eigen::Index i = 0; i < p; ++i) lambda[i] = 1.0 / static_cast<double>(i + 1);
  const Matrix a = q * lambda.asDiagonal() * q.transpose();
  const LinearOperator op = [&a](const Vector& v) { return Vector(a * v); };
  LanczosOptions o;
  o.m = m;
  o.seed = 1;
  for (auto _ : state) benchmark::DoNotOptimize(lanczos_top(op, p, o));
}
BENCHMARK(BM_LanczosDense)->Args({500, 10})->Args({2000, 20})->Unit(benchmark::kMillisecond);

}  // namespace
