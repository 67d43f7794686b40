#pragma once

// Softmax regression on a Gaussian mixture. In the zero-variance, two-class,
// orthogonal-means limit gradient flow has a closed-form late-time solution:
//
//   theta_1(t) = tt_1 + tp + (mu_1 / 2) log(eta t + c_1) - (mu_2 / 2) log(eta t + c_2)
//   theta_2(t) = tt_2 + tp - (mu_1 / 2) log(eta t + c_1) + (mu_2 / 2) log(eta t + c_2)
//
// with tt_i orthogonal to both means and tp in their span. The gradient is
// grad_1 = -grad_2 = -mu_1 / (2(eta t + c_1)) + mu_2 / (2(eta t + c_2)), and
// the Hessian is [[1,-1],[-1,1]] (x) sum_i mu_i mu_i^T / (2(eta t + c_i)),
// whose nonzero eigenvalues are 1 / (eta t + c_i).
//
// Parameters use the nn flattening of a bias-free softmax regression:
// theta_1 (weights of class 0) followed by theta_2 (class 1).

#include "sscope/data.hpp"
#include "sscope/diagnostics.hpp"
#include "sscope/nn.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace sscope::toy {

struct MixtureConfig {
  int num_classes = 2;
  Eigen::Index ambient_dim = 1000;
  double sigma = 0.0;  // per-coordinate standard deviation
  Eigen::Index samples_per_class = 1;
  bool orthogonalize_means = true;
  std::uint64_t seed = 0;
};

struct Mixture {
  data::Dataset dataset;
  Matrix means;  // d x k, unit columns
};

/// Unit means (Gram-Schmidt orthogonalized when requested) and samples
/// mean + sigma * N(0, I), class-major order.
Mixture sample_mixture(const MixtureConfig& config);

/// Softmax regression spec for a mixture.
nn::ModelSpec softmax_spec(Eigen::Index dim, int num_classes, bool use_bias);

struct AnalyticSolution {
  double c1 = 1.0;
  double c2 = 1.0;
  Vector theta_tilde_1;
  Vector theta_tilde_2;
  Vector theta_prime;
  Vector mu1;
  Vector mu2;
  double eta = 0.01;

  /// Throws InvalidArgument when the orthogonality constraints fail by more
  /// than `tol`, or (with require_positive_c) when some c_i <= 0.
  void check(double tol = 1e-10, bool require_positive_c = true) const;
};

/// (theta_1, theta_2) at time t (in steps). Requires eta t + c_i > 0.
std::pair<Vector, Vector> analytic_params(const AnalyticSolution& sol, double t);
ParamVector analytic_param_vector(const AnalyticSolution& sol, double t);

/// (grad_1, grad_2) with grad_2 = -grad_1.
std::pair<Vector, Vector> analytic_gradient(const AnalyticSolution& sol, double t);

struct AnalyticHessian {
  std::vector<double> eigenvalues;  // exact 1/(eta t + c_i), descending
  Matrix eigenvectors;              // 2d x 2, (mu_i, -mu_i)/sqrt(2) matching eigenvalues
  double leading_order = 0.0;       // 1/(eta t)
  Matrix block;                     // d x d factor sum_i mu_i mu_i^T / (2(eta t + c_i))
};

AnalyticHessian analytic_hessian(const AnalyticSolution& sol, double t);

/// The two-sample dataset {(mu_1, 0), (mu_2, 1)}.
data::Dataset two_sample_dataset(const Vector& mu1, const Vector& mu2);

/// Exact two-sample loss 1/2 log(1 + e^{(t2-t1).mu1}) + 1/2 log(1 + e^{(t1-t2).mu2}).
double two_sample_loss(const ParamVector& theta, const Vector& mu1, const Vector& mu2);

struct TrajectoryPoint {
  double t = 0.0;
  ParamVector theta;
};

struct AnalyticFit {
  AnalyticSolution solution;
  std::vector<double> residuals;  // max |theta_numeric - theta_analytic| per point
  double max_residual = 0.0;
};

class NotLateTime : public Error {
 public:
  NotLateTime(double measured_loss, double t);
  double measured_loss;
  double t;
};

/// Loss threshold below which trajectories count as late-time.
inline constexpr double kLateTimeLoss = 0.05;

/// Least-squares projection of a numerical trajectory onto the analytic
/// solution family: log(eta t + c_i) fitted to the logit margins, constant
/// vectors averaged. Needs orthogonal means and at least two points, all with
/// two-sample loss below kLateTimeLoss. The fitted c_i may be nonpositive for
/// runs that started near the origin; eta t + c_i > 0 holds on the fit window.
AnalyticFit fit_analytic(const std::vector<TrajectoryPoint>& trajectory, const Vector& mu1, const Vector& mu2,
                         double eta);

// Perturbation suite.

struct VariantConfig {
  std::string name;
  MixtureConfig mixture;
  bool use_bias = false;
  double eta = 0.1;
  std::int64_t steps = 5000;
  std::int64_t measure_every = 500;
  int extra_eigs = 5;  // eigenpairs tracked beyond the k top ones
  std::uint64_t init_seed = 1;
};

struct VariantReport {
  std::string name;
  VariantConfig config;
  std::vector<DiagnosticsRecord> records;
  int top_dimension = 0;       // index of the largest eigenvalue ratio gap; values below 1e-10 lambda_1 are zero
  int alignment_index = 0;     // 1-based argmax of c_i^2 over the top-k at the last measurement
  int smallest_top_index = 0;  // 1-based index of the smallest of the top-k eigenvalues
  double bulk_max_eigenvalue = 0.0;  // lambda_{k+1} at the last measurement
  double min_top_eigenvalue = 0.0;
  Metric final_f_top;
  double final_loss = 0.0;
};

/// Full-batch gradient descent on each variant with measurements of loss,
/// f_top(k), c_i^2 and the top k + extra_eigs Hessian eigenvalues.
VariantReport run_variant(const VariantConfig& config);
std::vector<VariantReport> perturbation_suite(const std::vector<VariantConfig>& variants);

/// The grid sigma in {0, 0.02}, bias in {off, on}, k in {2, 5, 10}, d = 1000.
std::vector<VariantConfig> default_variants();

}  // namespace sscope::toy
