#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sscope {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Flat coordinate vector of all model parameters. Gradients, Hessian-vector
/// products and eigenvectors all live in this space.
using ParamVector = Eigen::VectorXd;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition of an operation was violated (bad shapes, bad config).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Loss or activations stopped being finite.
class NumericOverflow : public Error {
 public:
  using Error::Error;
};

}  // namespace sscope
