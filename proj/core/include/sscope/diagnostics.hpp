#pragma once

// Measurements relating the gradient to the top Hessian subspace.
//
// Metrics that are undefined at a point (zero gradient, zero Hg) come back as
// an empty std::optional and are written as the token `undefined` in CSV.

#include "sscope/eigensolver.hpp"
#include "sscope/types.hpp"

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace sscope {

using Metric = std::optional<double>;

/// ||P g||^2 / ||g||^2 for the span of `basis` (column-orthonormal, p x k).
Metric fraction_in_subspace(const Vector& g, const Eigen::Ref<const Matrix>& basis);
Metric fraction_in_subspace(const Vector& g, const EigenBasis& basis);

/// g^T H g / (||g|| ||Hg||), in [-1, 1].
Metric hessian_gradient_overlap(const Vector& g, const Vector& hg);

/// Tr(P_a P_b) / sqrt(Tr P_a Tr P_b) for column-orthonormal bases of possibly
/// different dimensions.
double subspace_overlap(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b);
double subspace_overlap(const EigenBasis& a, const EigenBasis& b);

/// c_i^2 = (v_i . g)^2 / ||g||^2 in basis order.
std::optional<std::vector<double>> eigvec_coefficients(const Vector& g, const EigenBasis& basis);

struct VertexOverlap {
  double analytic = 0.0;
  double monte_carlo = 0.0;  // mean over samples
  double sample_sd = 0.0;
  std::size_t samples = 0;
};

/// Overlap(w, Hw) for w at a random vertex of the unit cube in the eigenbasis
/// of the given top eigenvalues: closed form sum(l) / sqrt(k sum(l^2)) and a
/// Monte Carlo average that builds w and Hw explicitly.
VertexOverlap random_vertex_overlap(const std::vector<double>& lambdas, std::size_t samples = 10000,
                                    std::uint64_t seed = 0);

enum class HistogramScale { linear, log_abs };

struct Histogram {
  HistogramScale scale = HistogramScale::linear;
  std::vector<double> edges;   // num_bins + 1; log10 of |lambda| for log_abs
  std::vector<double> counts;  // per bin, averaged over realizations
  double dropped = 0.0;        // nonpositive values skipped under log_abs (averaged)
  std::size_t realizations = 1;
};

Histogram spectrum_histogram(const std::vector<double>& eigs, std::size_t num_bins, HistogramScale scale);

/// Histogram over several spectra on common edges; counts are sums divided by
/// the number of realizations.
Histogram spectrum_histogram(const std::vector<std::vector<double>>& realizations, std::size_t num_bins,
                             HistogramScale scale);

/// One measurement point.
struct DiagnosticsRecord {
  std::int64_t step = 0;
  double loss = 0.0;
  std::optional<double> accuracy;  // classification only
  Metric f_top;                     // for the primary tracked dimension
  Metric hg_overlap;
  std::vector<double> c_squared;
  std::vector<double> eigenvalues;
  std::vector<std::pair<int, Metric>> f_top_by_dim;  // extra tracked dimensions
  bool eigen_measured = false;
  bool hg_measured = false;
};

/// CSV layout: step, loss, accuracy, f_top, hg_overlap, lambda_1..lambda_m,
/// c2_1..c2_m, then f_top_d<k> for each extra tracked dimension. Cells that
/// were not measured are empty.
class MetricsCsvWriter {
 public:
  MetricsCsvWriter(std::ostream& out, std::size_t num_eigen, std::vector<int> extra_dims);
  void write(const DiagnosticsRecord& record);

 private:
  std::ostream& out_;
  std::size_t num_eigen_;
  std::vector<int> extra_dims_;
};

std::string format_metric(const Metric& m);

}  // namespace sscope
