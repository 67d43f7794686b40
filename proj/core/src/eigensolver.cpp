#include "sscope/eigensolver.hpp"

#include "sscope/tridiagonal.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <random>

namespace sscope {

EigenBasis EigenBasis::slice(Eigen::Index begin, Eigen::Index count) const {
  if (begin < 0 || count < 0 || begin + count > size())
    throw InvalidArgument("basis slice out of range");
  EigenBasis out;
  out.step = step;
  out.iterations = iterations;
  out.converged = converged;
  out.vectors = vectors.middleCols(begin, count);
  const auto b = static_cast<std::size_t>(begin);
  const auto e = b + static_cast<std::size_t>(count);
  out.eigenvalues.assign(eigenvalues.begin() + b, eigenvalues.begin() + e);
  if (residuals.size() >= e) out.residuals.assign(residuals.begin() + b, residuals.begin() + e);
  return out;
}

double EigenBasis::max_cross_dot() const {
  if (size() < 2) return 0.0;
  Matrix gram = vectors.transpose() * vectors;
  gram.diagonal().setZero();
  return gram.cwiseAbs().maxCoeff();
}

double EigenBasis::max_norm_error() const {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < size(); ++i) worst = std::max(worst, std::abs(vectors.col(i).norm() - 1.0));
  return worst;
}

namespace {

Vector random_unit(std::mt19937_64& rng, Eigen::Index p) {
  std::normal_distribution<double> normal;
  Vector v(p);
  for (Eigen::Index i = 0; i < p; ++i) v[i] = normal(rng);
  return v / v.norm();
}

// Two passes of classical Gram-Schmidt against the first `count` columns.
void orthogonalize(const Matrix& q, Eigen::Index count, Vector& w) {
  if (count == 0) return;
  for (int pass = 0; pass < 2; ++pass) {
    const Vector coeff = q.leftCols(count).transpose() * w;
    w.noalias() -= q.leftCols(count) * coeff;
  }
}

struct RitzPairs {
  std::vector<double> values;  // descending
  Matrix coeffs;               // j x m
  std::vector<double> estimates;
};

RitzPairs top_ritz(const std::vector<double>& alpha, const std::vector<double>& beta, Eigen::Index j,
                   Eigen::Index m, double last_beta) {
  Vector d(j);
  Vector e(std::max<Eigen::Index>(j - 1, 0));
  for (Eigen::Index i = 0; i < j; ++i) d[i] = alpha[static_cast<std::size_t>(i)];
  for (Eigen::Index i = 0; i + 1 < j; ++i) e[i] = beta[static_cast<std::size_t>(i)];
  const TridiagonalEigen te = tridiagonal_eigen(d, e);
  const Eigen::Index take = std::min(m, j);
  RitzPairs out;
  out.coeffs.resize(j, take);
  for (Eigen::Index k = 0; k < take; ++k) {
    const Eigen::Index src = j - 1 - k;
    out.values.push_back(te.values[src]);
    out.coeffs.col(k) = te.vectors.col(src);
    out.estimates.push_back(std::abs(last_beta * te.vectors(j - 1, src)));
  }
  return out;
}

EigenBasis assemble(const LinearOperator& op, const Matrix& q, Eigen::Index j, const RitzPairs& ritz) {
  EigenBasis basis;
  basis.vectors = q.leftCols(j) * ritz.coeffs;
  basis.eigenvalues = ritz.values;
  basis.iterations = static_cast<int>(j);
  for (Eigen::Index i = 0; i < basis.size(); ++i) {
    Vector v = basis.vectors.col(i);
    v /= v.norm();
    basis.vectors.col(i) = v;
    const Vector hv = op(v);
    basis.residuals.push_back((hv - ritz.values[static_cast<std::size_t>(i)] * v).norm());
  }
  return basis;
}

}  // namespace

EigenBasis lanczos_top(const LinearOperator& op, Eigen::Index p, const LanczosOptions& options) {
  const Eigen::Index m = options.m;
  if (p < 1) throw InvalidArgument("lanczos: operator dimension must be positive");
  if (m < 1 || m > p) throw InvalidArgument("lanczos: need 1 <= m <= p");
  const Eigen::Index max_iters = options.max_iters > 0 ? options.max_iters : std::min(10 * m, p);
  if (max_iters < m || max_iters > p) throw InvalidArgument("lanczos: need m <= max_iters <= p");

  std::mt19937_64 rng(options.seed);
  Matrix q(p, max_iters);
  std::vector<double> alpha;
  std::vector<double> beta;  // beta[i] couples vectors i and i+1
  Vector current = random_unit(rng, p);
  double scale = 0.0;
  Eigen::Index next_check = m;
  bool exhausted = false;
  std::vector<double> block_top;  // top Ritz values at the previous breakdown

  auto threshold = [&](double lambda) { return options.tol * std::max(options.scale_floor, std::abs(lambda)); };

  for (Eigen::Index j = 0; j < max_iters;) {
    q.col(j) = current;
    Vector w = op(current);
    const double a = current.dot(w);
    alpha.push_back(a);
    w -= a * current;
    if (j > 0) w -= beta.back() * q.col(j - 1);
    orthogonalize(q, j + 1, w);
    double b = w.norm();
    ++j;
    scale = std::max({scale, std::abs(a), b});

    const bool breakdown = b <= 1e-12 * std::max(scale, std::numeric_limits<double>::min());
    if (breakdown) {
      b = 0.0;
      if (j == p) {
        exhausted = true;
      } else {
        // Restart inside the orthogonal complement of the Krylov space so far.
        Vector fresh = random_unit(rng, p);
        orthogonalize(q, j, fresh);
        const double norm = fresh.norm();
        if (norm < 1e-8)
          exhausted = true;
        else
          current = fresh / norm;
      }
    } else {
      current = w / b;
    }

    const bool last = j == max_iters || exhausted;
    if (j >= m && (j >= next_check || breakdown || last)) {
      const RitzPairs ritz = top_ritz(alpha, beta, j, m, b);
      bool estimated = true;
      for (std::size_t i = 0; i < ritz.values.size(); ++i)
        if (ritz.estimates[i] > threshold(ritz.values[i])) estimated = false;
      if (breakdown && !last) {
        // An invariant subspace has exact Ritz pairs but may hide further
        // copies of a repeated eigenvalue. Accept only once a restart block
        // leaves the top m values unchanged.
        bool stable = !block_top.empty();
        for (std::size_t i = 0; stable && i < ritz.values.size(); ++i)
          if (std::abs(ritz.values[i] - block_top[i]) > threshold(ritz.values[i])) stable = false;
        block_top = ritz.values;
        if (!stable) estimated = false;
      }
      if (estimated || last) {
        EigenBasis basis = assemble(op, q, j, ritz);
        bool ok = true;
        for (std::size_t i = 0; i < basis.residuals.size(); ++i)
          if (basis.residuals[i] > threshold(basis.eigenvalues[i])) ok = false;
        basis.converged = ok;
        if (ok) return basis;
        if (last)
          throw LanczosNotConverged("lanczos: no convergence after " + std::to_string(j) + " iterations",
                                    std::move(basis));
      }
      next_check = j + std::max<Eigen::Index>(1, j / 10);
    }
    if (exhausted) break;
    beta.push_back(b);
  }
  throw Error("lanczos: unreachable");
}

Matrix dense_hessian(const nn::ModelSpec& spec, const ParamVector& params, const nn::Batch& batch,
                     Eigen::Index cap) {
  const Eigen::Index p = spec.parameter_count();
  if (p > cap)
    throw InvalidArgument("dense Hessian refused: p = " + std::to_string(p) + " exceeds cap " +
                          std::to_string(cap));
  const nn::HessianOperator hessian(spec, params, batch);
  Matrix h(p, p);
  ParamVector e = ParamVector::Zero(p);
  for (Eigen::Index i = 0; i < p; ++i) {
    e[i] = 1.0;
    h.col(i) = hessian.apply(e);
    e[i] = 0.0;
  }
  return h;
}

Spectrum full_spectrum(const Matrix& matrix, bool with_vectors, double symmetry_tol) {
  if (matrix.rows() != matrix.cols()) throw InvalidArgument("full_spectrum: matrix is not square");
  const double magnitude = std::max(1.0, matrix.cwiseAbs().maxCoeff());
  const double asym = (matrix - matrix.transpose()).cwiseAbs().maxCoeff();
  if (asym > symmetry_tol * magnitude)
    throw InvalidArgument("full_spectrum: matrix asymmetry " + std::to_string(asym) + " exceeds tolerance");

  Eigen::SelfAdjointEigenSolver<Matrix> solver(
      matrix, with_vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw Error("full_spectrum: eigensolver failed");
  const Eigen::Index n = matrix.rows();
  Spectrum out;
  out.eigenvalues.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) out.eigenvalues[static_cast<std::size_t>(i)] = solver.eigenvalues()[n - 1 - i];
  if (with_vectors) out.vectors = solver.eigenvectors().rowwise().reverse();
  return out;
}

}  // namespace sscope
