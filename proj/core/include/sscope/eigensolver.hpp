#pragma once

// Top eigenpairs of a symmetric operator by Lanczos iteration with full
// reorthogonalization, and a dense route (assembled Hessian + symmetric
// eigensolve) used as a reference for small problems.

#include "sscope/nn.hpp"
#include "sscope/types.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

namespace sscope {

using LinearOperator = std::function<Vector(const Vector&)>;

/// Ordered eigenpairs (descending eigenvalue) of the Hessian at one step.
struct EigenBasis {
  std::vector<double> eigenvalues;
  Matrix vectors;  // p x m, column i pairs with eigenvalues[i]
  std::int64_t step = 0;
  std::vector<double> residuals;  // ||H v_i - lambda_i v_i||
  int iterations = 0;
  bool converged = false;

  Eigen::Index dim() const { return vectors.rows(); }
  Eigen::Index size() const { return vectors.cols(); }

  /// Columns [begin, begin + count) as a new basis.
  EigenBasis slice(Eigen::Index begin, Eigen::Index count) const;
  /// Largest |v_i . v_j| over i != j.
  double max_cross_dot() const;
  /// Largest | ||v_i|| - 1 |.
  double max_norm_error() const;
};

struct LanczosOptions {
  Eigen::Index m = 1;          // number of eigenpairs wanted
  std::uint64_t seed = 0;      // start vector and restart vectors
  double tol = 1e-8;           // pair i converged when residual <= tol * max(scale_floor, |lambda_i|)
  double scale_floor = 1.0;
  Eigen::Index max_iters = 0;  // 0 selects min(10 m, p)
};

class LanczosNotConverged : public Error {
 public:
  LanczosNotConverged(const std::string& what, EigenBasis best)
      : Error(what), best_(std::move(best)) {}
  const EigenBasis& best() const { return best_; }

 private:
  EigenBasis best_;
};

/// Top-m algebraic eigenpairs of `op` (dimension p).
///
/// Every new Lanczos vector is orthogonalized twice against all stored ones.
/// A vanishing off-diagonal restarts the recurrence from a fresh seeded
/// vector orthogonal to the current Krylov space, which also recovers
/// repeated eigenvalues: after a breakdown the result is accepted only when
/// the following restart block leaves the top m values unchanged. Residuals in the result are measured with one extra
/// operator application per pair. Throws LanczosNotConverged (carrying the
/// best basis found) when max_iters is exhausted.
EigenBasis lanczos_top(const LinearOperator& op, Eigen::Index p, const LanczosOptions& options);

/// Default cap on p for dense Hessian assembly.
inline constexpr Eigen::Index kDenseHessianCap = 2000;

/// Assembles H column by column with Hessian-vector products. Refuses when p
/// exceeds `cap`.
Matrix dense_hessian(const nn::ModelSpec& spec, const ParamVector& params, const nn::Batch& batch,
                     Eigen::Index cap = kDenseHessianCap);

struct Spectrum {
  std::vector<double> eigenvalues;  // descending
  Matrix vectors;                   // empty unless requested
};

/// All eigenvalues of a symmetric matrix, descending. Throws InvalidArgument
/// when max |A - A^T| exceeds `symmetry_tol * max(1, max |A|)`.
Spectrum full_spectrum(const Matrix& matrix, bool with_vectors = false, double symmetry_tol = 1e-9);

// Binary basis file, little-endian:
//   char[8]  "SSCBASIS"
//   uint32   format version (1)
//   uint64   p, uint64 m, int64 step
//   uint32   converged flag, int32 iterations
//   double[m] eigenvalues, double[m] residuals
//   double[m*p] vectors, one vector after another
void save_basis(const EigenBasis& basis, const std::filesystem::path& path);
EigenBasis load_basis(const std::filesystem::path& path);

}  // namespace sscope
