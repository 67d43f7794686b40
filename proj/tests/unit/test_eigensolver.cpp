#include "sscope/diagnostics.hpp"
#include "sscope/eigensolver.hpp"
#include "sscope/parallel.hpp"
#include "sscope/toymodel.hpp"

#include "../support/oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

namespace sscope {
namespace {

LinearOperator matrix_op(const Matrix& a) {
  return [a](const Vector& v) -> Vector { return a * v; };
}

Matrix with_spectrum(const Vector& lambdas, std::uint64_t seed) {
  const Matrix q = testing::random_orthogonal(lambdas.size(), seed);
  return q * lambdas.asDiagonal() * q.transpose();
}

void expect_orthonormal(const EigenBasis& b) {
  EXPECT_LE(b.max_cross_dot(), 1e-8);
  EXPECT_LE(b.max_norm_error(), 1e-10);
}

TEST(Lanczos, ScaledIdentityGivesRepeatedEigenvalue) {
  const Eigen::Index p = 50;
  LanczosOptions o;
  o.m = 2;
  o.max_iters = 20;
  const auto b = lanczos_top([](const Vector& v) -> Vector { return 3.0 * v; }, p, o);
  ASSERT_EQ(b.size(), 2);
  EXPECT_NEAR(b.eigenvalues[0], 3.0, 1e-12);
  EXPECT_NEAR(b.eigenvalues[1], 3.0, 1e-12);
  for (double r : b.residuals) EXPECT_LE(r, 1e-12);
  EXPECT_TRUE(b.converged);
  expect_orthonormal(b);
}

TEST(Lanczos, DiagonalMatrix) {
  Matrix a = Vector::LinSpaced(30, 1.0, 30.0).asDiagonal();
  LanczosOptions o;
  o.m = 3;
  o.max_iters = 30;
  const auto b = lanczos_top(matrix_op(a), 30, o);
  EXPECT_NEAR(b.eigenvalues[0], 30.0, 1e-9);
  EXPECT_NEAR(b.eigenvalues[1], 29.0, 1e-9);
  EXPECT_NEAR(b.eigenvalues[2], 28.0, 1e-9);
  EXPECT_NEAR(std::abs(b.vectors(29, 0)), 1.0, 1e-9);
}

TEST(Lanczos, RandomSymmetricMatchesDenseOracle) {
  const Eigen::Index p = 500;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  Matrix g(p, p);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
  const Matrix a = (g + g.transpose()) / 2.0;
  LanczosOptions o;
  o.m = 10;
  o.max_iters = p;
  o.tol = 1e-10;
  const auto b = lanczos_top(matrix_op(a), p, o);
  const auto dense = full_spectrum(a);
  for (int i = 0; i < 10; ++i)
    EXPECT_LE(std::abs(b.eigenvalues[i] - dense.eigenvalues[i]), 1e-8 * std::abs(dense.eigenvalues[i])) << i;
  expect_orthonormal(b);
}

TEST(Lanczos, ResidualsBelowToleranceOnConvergence) {
  Vector lambdas = Vector::LinSpaced(200, -1.0, 1.0);
  lambdas.head(5) << 10, 9, 8, 7, 6;
  const Matrix a = with_spectrum(lambdas, 4);
  LanczosOptions o;
  o.m = 5;
  o.tol = 1e-8;
  o.max_iters = 200;
  const auto b = lanczos_top(matrix_op(a), 200, o);
  ASSERT_TRUE(b.converged);
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    const Vector v = b.vectors.col(i);
    const double r = (a * v - b.eigenvalues[static_cast<std::size_t>(i)] * v).norm();
    EXPECT_LE(r, 1e-8 * std::max(1.0, std::abs(b.eigenvalues[static_cast<std::size_t>(i)])));
    EXPECT_NEAR(r, b.residuals[static_cast<std::size_t>(i)], 1e-12);
  }
}

TEST(Lanczos, KnownSpectrumRecoveryAcrossSeeds) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Eigen::Index p = 120;
    Vector lambdas(p);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> bulk(-0.5, 0.5);
    for (Eigen::Index i = 0; i < p; ++i) lambdas[i] = i < 4 ? 5.0 - 0.5 * static_cast<double>(i) : bulk(rng);
    const Matrix a = with_spectrum(lambdas, 100 + seed);
    LanczosOptions o;
    o.m = 4;
    o.seed = seed;
    o.max_iters = p;
    const auto b = lanczos_top(matrix_op(a), p, o);
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(b.eigenvalues[static_cast<std::size_t>(i)], 5.0 - 0.5 * i, 1e-8 * 5.0);
  }
}

TEST(Lanczos, DegenerateTopPairSpansTheEigenspace) {
  const Eigen::Index p = 80;
  Vector lambdas = Vector::Constant(p, 0.1);
  lambdas[0] = lambdas[1] = 2.0;
  const Matrix q = testing::random_orthogonal(p, 9);
  const Matrix a = q * lambdas.asDiagonal() * q.transpose();
  LanczosOptions o;
  o.m = 2;
  o.max_iters = p;
  const auto b = lanczos_top(matrix_op(a), p, o);
  EXPECT_NEAR(b.eigenvalues[0], 2.0, 1e-10);
  EXPECT_NEAR(b.eigenvalues[1], 2.0, 1e-10);
  // Any basis of the eigenspace is acceptable; the projector is what matters.
  EXPECT_NEAR(subspace_overlap(b.vectors, q.leftCols(2)), 1.0, 1e-10);
}

TEST(Lanczos, DeterministicPerSeed) {
  const Matrix a = with_spectrum(Vector::LinSpaced(60, 0.0, 3.0), 5);
  LanczosOptions o;
  o.m = 3;
  o.max_iters = 60;
  o.seed = 42;
  const auto x = lanczos_top(matrix_op(a), 60, o);
  const auto y = lanczos_top(matrix_op(a), 60, o);
  EXPECT_EQ(x.eigenvalues, y.eigenvalues);
  EXPECT_TRUE(x.vectors == y.vectors);
  EXPECT_EQ(x.iterations, y.iterations);
}

TEST(Lanczos, HessianResultIndependentOfWorkerCount) {
  auto pb = testing::random_problem(17);
  nn::Batch big;
  big.inputs = Matrix::Random(2 * nn::HessianOperator::kShardRows + 5, pb.spec.input_dim);
  if (pb.spec.loss_kind == nn::LossKind::cross_entropy) {
    for (Eigen::Index i = 0; i < big.size(); ++i) big.labels.push_back(static_cast<std::int32_t>(i % pb.spec.num_outputs));
  } else {
    big.targets = Matrix::Random(big.size(), pb.spec.num_outputs);
  }
  LanczosOptions o;
  o.m = 2;
  o.max_iters = pb.params.size();
  o.tol = 1e-6;
  const unsigned before = worker_threads();
  set_worker_threads(1);
  const nn::HessianOperator h1(pb.spec, pb.params, big);
  const auto b1 = lanczos_top([&](const Vector& v) { return h1.apply(v); }, h1.dim(), o);
  set_worker_threads(3);
  const nn::HessianOperator h3(pb.spec, pb.params, big);
  const auto b3 = lanczos_top([&](const Vector& v) { return h3.apply(v); }, h3.dim(), o);
  set_worker_threads(before);
  EXPECT_EQ(b1.eigenvalues, b3.eigenvalues);
  EXPECT_TRUE(b1.vectors == b3.vectors);
}

TEST(Lanczos, NotConvergedCarriesBestBasis) {
  Vector lambdas = Vector::LinSpaced(300, 0.0, 1.0).reverse();
  const Matrix a = with_spectrum(lambdas, 6);
  LanczosOptions o;
  o.m = 5;
  o.max_iters = 8;
  o.tol = 1e-14;
  try {
    lanczos_top(matrix_op(a), 300, o);
    FAIL() << "expected LanczosNotConverged";
  } catch (const LanczosNotConverged& e) {
    EXPECT_EQ(e.best().size(), 5);
    EXPECT_FALSE(e.best().converged);
    EXPECT_EQ(e.best().residuals.size(), 5u);
    EXPECT_EQ(e.best().iterations, 8);
    EXPECT_LE(e.best().eigenvalues[0], 1.0 + 1e-12);
  }
}

TEST(Lanczos, RejectsBadOptions) {
  const auto id = [](const Vector& v) -> Vector { return v; };
  LanczosOptions o;
  o.m = 5;
  EXPECT_THROW(lanczos_top(id, 4, o), InvalidArgument);
  o.m = 2;
  o.max_iters = 1;
  EXPECT_THROW(lanczos_top(id, 4, o), InvalidArgument);
  o.max_iters = 5;
  EXPECT_THROW(lanczos_top(id, 4, o), InvalidArgument);
  EXPECT_THROW(lanczos_top(id, 0, o), InvalidArgument);
}

TEST(DenseHessian, SymmetricAndMatchesReference) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto pb = testing::random_problem(700 + s);
    const Matrix h = dense_hessian(pb.spec, pb.params, pb.batch);
    EXPECT_LE((h - h.transpose()).cwiseAbs().maxCoeff(), 1e-9);
    const Matrix ref = testing::reference_hessian(pb.spec, pb.params, pb.batch);
    EXPECT_LE((h - ref).cwiseAbs().maxCoeff(), 1e-10 * std::max(1.0, ref.cwiseAbs().maxCoeff()));
  }
}

TEST(DenseHessian, RefusesAboveCap) {
  nn::ModelSpec spec;
  spec.input_dim = 50;
  spec.num_outputs = 3;
  nn::Batch b;
  b.inputs = Matrix::Zero(2, 50);
  b.labels = {0, 1};
  EXPECT_THROW(dense_hessian(spec, nn::init_params(spec, 0), b, 100), InvalidArgument);
  EXPECT_NO_THROW(dense_hessian(spec, nn::init_params(spec, 0), b, 153));
}

TEST(DenseHessian, TwoSampleToyHasRankTwo) {
  toy::MixtureConfig mc;
  mc.ambient_dim = 40;
  mc.seed = 3;
  const auto mix = toy::sample_mixture(mc);
  const auto spec = toy::softmax_spec(40, 2, false);
  const ParamVector theta = nn::init_params(spec, 4);
  const auto eig = full_spectrum(dense_hessian(spec, theta, mix.dataset.samples)).eigenvalues;
  EXPECT_GT(eig[1], 1e-8);
  for (std::size_t i = 2; i < eig.size(); ++i) EXPECT_LE(std::abs(eig[i]), 1e-10);
}

TEST(DenseHessian, ZeroVarianceMixtureRankAtMostKTimesKMinusOne) {
  for (int k : {3, 4}) {
    toy::MixtureConfig mc;
    mc.num_classes = k;
    mc.ambient_dim = 20;
    mc.orthogonalize_means = false;
    mc.samples_per_class = 3;
    mc.seed = static_cast<std::uint64_t>(k);
    const auto mix = toy::sample_mixture(mc);
    const auto spec = toy::softmax_spec(20, k, false);
    const ParamVector theta = nn::init_params(spec, 1);
    const auto eig = full_spectrum(dense_hessian(spec, theta, mix.dataset.samples)).eigenvalues;
    int rank = 0;
    for (double l : eig) rank += std::abs(l) > 1e-10 ? 1 : 0;
    EXPECT_LE(rank, k * (k - 1)) << "k = " << k;
    EXPECT_GT(rank, 0);
  }
}

TEST(FullSpectrum, DiagonalSortedDescending) {
  const Matrix a = Eigen::Vector3d(1, 2, 3).asDiagonal();
  const auto s = full_spectrum(a, true);
  EXPECT_EQ(s.eigenvalues, (std::vector<double>{3, 2, 1}));
  EXPECT_NEAR(std::abs(s.vectors(2, 0)), 1.0, 1e-15);
}

TEST(FullSpectrum, RejectsAsymmetry) {
  Matrix a = Matrix::Identity(3, 3);
  a(0, 1) = 1e-3;
  EXPECT_THROW(full_spectrum(a), InvalidArgument);
  EXPECT_THROW(full_spectrum(Matrix::Zero(2, 3)), InvalidArgument);
}

TEST(EigenBasis, SliceAndInvariants) {
  const Matrix a = with_spectrum(Vector::LinSpaced(40, 0.0, 4.0), 8);
  LanczosOptions o;
  o.m = 6;
  o.max_iters = 40;
  const auto b = lanczos_top(matrix_op(a), 40, o);
  const auto s = b.slice(2, 3);
  EXPECT_EQ(s.size(), 3);
  EXPECT_EQ(s.eigenvalues[0], b.eigenvalues[2]);
  EXPECT_TRUE(s.vectors.col(0) == b.vectors.col(2));
  EXPECT_THROW(b.slice(4, 3), InvalidArgument);
  for (std::size_t i = 1; i < b.eigenvalues.size(); ++i) EXPECT_GE(b.eigenvalues[i - 1], b.eigenvalues[i]);
}

TEST(BasisFile, RoundTripIsExact) {
  EigenBasis b;
  b.eigenvalues = {3.5, -1.25};
  b.residuals = {1e-12, 2e-11};
  b.vectors = Matrix::Random(7, 2);
  b.step = 1234;
  b.iterations = 17;
  b.converged = true;
  const auto path = std::filesystem::temp_directory_path() / "sscope_basis_roundtrip.bin";
  save_basis(b, path);
  const auto r = load_basis(path);
  EXPECT_EQ(r.eigenvalues, b.eigenvalues);
  EXPECT_EQ(r.residuals, b.residuals);
  EXPECT_TRUE(r.vectors == b.vectors);
  EXPECT_EQ(r.step, 1234);
  EXPECT_EQ(r.iterations, 17);
  EXPECT_TRUE(r.converged);

  // Header: 8 magic bytes, version, p, m, step.
  std::ifstream in(path, std::ios::binary);
  char magic[8];
  in.read(magic, 8);
  EXPECT_EQ(std::string(magic, 8), "SSCBASIS");
  std::filesystem::resize_file(path, 40);
  EXPECT_THROW(load_basis(path), Error);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace sscope
