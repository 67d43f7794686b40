#pragma once

#include "sscope/types.hpp"

namespace sscope {

struct TridiagonalEigen {
  Vector values;   // ascending
  Matrix vectors;  // column i pairs with values[i]
};

/// Eigendecomposition of a symmetric tridiagonal matrix by implicit QL with
/// Wilkinson shifts. `diag` has length n, `offdiag` length n - 1.
TridiagonalEigen tridiagonal_eigen(const Vector& diag, const Vector& offdiag);

}  // namespace sscope
