#include "sscope/diagnostics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <random>

namespace sscope {

Metric fraction_in_subspace(const Vector& g, const Eigen::Ref<const Matrix>& basis) {
  if (basis.rows() != g.size()) throw InvalidArgument("fraction_in_subspace: dimension mismatch");
  const double norm2 = g.squaredNorm();
  if (norm2 == 0.0) return std::nullopt;
  const double proj = (basis.transpose() * g).squaredNorm();
  return std::clamp(proj / norm2, 0.0, 1.0);
}

Metric fraction_in_subspace(const Vector& g, const EigenBasis& basis) {
  return fraction_in_subspace(g, basis.vectors);
}

Metric hessian_gradient_overlap(const Vector& g, const Vector& hg) {
  if (g.size() != hg.size()) throw InvalidArgument("hessian_gradient_overlap: dimension mismatch");
  const double denom = g.norm() * hg.norm();
  if (denom == 0.0) return std::nullopt;
  return std::clamp(g.dot(hg) / denom, -1.0, 1.0);
}

double subspace_overlap(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b) {
  if (a.rows() != b.rows()) throw InvalidArgument("subspace_overlap: bases live in different spaces");
  if (a.cols() == 0 || b.cols() == 0) throw InvalidArgument("subspace_overlap: empty basis");
  // Tr(P_a P_b) = ||A^T B||_F^2 for orthonormal columns; Tr P = dimension.
  const double trace = (a.transpose() * b).squaredNorm();
  return trace / std::sqrt(static_cast<double>(a.cols()) * static_cast<double>(b.cols()));
}

double subspace_overlap(const EigenBasis& a, const EigenBasis& b) { return subspace_overlap(a.vectors, b.vectors); }

std::optional<std::vector<double>> eigvec_coefficients(const Vector& g, const EigenBasis& basis) {
  if (basis.dim() != g.size()) throw InvalidArgument("eigvec_coefficients: dimension mismatch");
  const double norm2 = g.squaredNorm();
  if (norm2 == 0.0) return std::nullopt;
  const Vector dots = basis.vectors.transpose() * g;
  std::vector<double> out(static_cast<std::size_t>(dots.size()));
  for (Eigen::Index i = 0; i < dots.size(); ++i) out[static_cast<std::size_t>(i)] = dots[i] * dots[i] / norm2;
  return out;
}

VertexOverlap random_vertex_overlap(const std::vector<double>& lambdas, std::size_t samples, std::uint64_t seed) {
  if (lambdas.empty()) throw InvalidArgument("random_vertex_overlap: no eigenvalues");
  const auto k = static_cast<Eigen::Index>(lambdas.size());
  const Vector lam = Eigen::Map<const Vector>(lambdas.data(), k);
  const double sum_sq = lam.squaredNorm();
  if (sum_sq == 0.0) throw InvalidArgument("random_vertex_overlap: all eigenvalues are zero");

  VertexOverlap out;
  out.analytic = lam.sum() / std::sqrt(static_cast<double>(k) * sum_sq);
  out.samples = samples;
  if (samples == 0) return out;

  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  Vector w(k);
  double mean = 0.0;
  double m2 = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    for (Eigen::Index i = 0; i < k; ++i) w[i] = coin(rng) ? 1.0 : -1.0;
    const Vector hw = lam.cwiseProduct(w);
    const double value = *hessian_gradient_overlap(w, hw);
    const double delta = value - mean;
    mean += delta / static_cast<double>(s + 1);
    m2 += delta * (value - mean);
  }
  out.monte_carlo = mean;
  out.sample_sd = samples > 1 ? std::sqrt(m2 / static_cast<double>(samples - 1)) : 0.0;
  return out;
}

namespace {

std::vector<double> transformed(const std::vector<double>& eigs, HistogramScale scale, std::size_t& dropped) {
  std::vector<double> out;
  out.reserve(eigs.size());
  for (double e : eigs) {
    if (scale == HistogramScale::linear) {
      out.push_back(e);
    } else if (e > 0.0) {
      out.push_back(std::log10(e));
    } else {
      ++dropped;
    }
  }
  return out;
}

}  // namespace

Histogram spectrum_histogram(const std::vector<std::vector<double>>& realizations, std::size_t num_bins,
                             HistogramScale scale) {
  if (realizations.empty()) throw InvalidArgument("spectrum_histogram: no spectra");
  if (num_bins == 0) throw InvalidArgument("spectrum_histogram: need at least one bin");
  std::size_t dropped = 0;
  std::vector<std::vector<double>> values;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& eigs : realizations) {
    if (eigs.empty()) throw InvalidArgument("spectrum_histogram: empty spectrum");
    values.push_back(transformed(eigs, scale, dropped));
    for (double v : values.back()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }

  Histogram h;
  h.scale = scale;
  h.realizations = realizations.size();
  h.counts.assign(num_bins, 0.0);
  const double r = static_cast<double>(realizations.size());
  h.dropped = static_cast<double>(dropped) / r;
  if (!std::isfinite(lo)) {
    h.edges.assign(num_bins + 1, 0.0);
    return h;
  }
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double width = (hi - lo) / static_cast<double>(num_bins);
  for (std::size_t i = 0; i <= num_bins; ++i) h.edges.push_back(lo + width * static_cast<double>(i));
  h.edges.back() = hi;
  for (const auto& vs : values) {
    for (double v : vs) {
      auto bin = static_cast<std::size_t>((v - lo) / width);
      bin = std::min(bin, num_bins - 1);
      h.counts[bin] += 1.0;
    }
  }
  for (double& c : h.counts) c /= r;
  return h;
}

Histogram spectrum_histogram(const std::vector<double>& eigs, std::size_t num_bins, HistogramScale scale) {
  return spectrum_histogram(std::vector<std::vector<double>>{eigs}, num_bins, scale);
}

std::string format_metric(const Metric& m) {
  if (!m) return "undefined";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, *m);
  return std::string(buf, res.ptr);
}

MetricsCsvWriter::MetricsCsvWriter(std::ostream& out, std::size_t num_eigen, std::vector<int> extra_dims)
    : out_(out), num_eigen_(num_eigen), extra_dims_(std::move(extra_dims)) {
  out_ << "step,loss,accuracy,f_top,hg_overlap";
  for (std::size_t i = 1; i <= num_eigen_; ++i) out_ << ",lambda_" << i;
  for (std::size_t i = 1; i <= num_eigen_; ++i) out_ << ",c2_" << i;
  for (int d : extra_dims_) out_ << ",f_top_d" << d;
  out_ << '\n';
}

void MetricsCsvWriter::write(const DiagnosticsRecord& r) {
  out_ << r.step << ',' << format_metric(r.loss) << ',';
  if (r.accuracy) out_ << format_metric(*r.accuracy);
  out_ << ',';
  if (r.eigen_measured) out_ << format_metric(r.f_top);
  out_ << ',';
  if (r.hg_measured) out_ << format_metric(r.hg_overlap);
  for (std::size_t i = 0; i < num_eigen_; ++i) {
    out_ << ',';
    if (r.eigen_measured && i < r.eigenvalues.size()) out_ << format_metric(r.eigenvalues[i]);
  }
  for (std::size_t i = 0; i < num_eigen_; ++i) {
    out_ << ',';
    if (!r.eigen_measured) continue;
    if (r.c_squared.empty())
      out_ << "undefined";
    else if (i < r.c_squared.size())
      out_ << format_metric(r.c_squared[i]);
  }
  for (int d : extra_dims_) {
    out_ << ',';
    if (!r.eigen_measured) continue;
    for (const auto& [dim, value] : r.f_top_by_dim)
      if (dim == d) out_ << format_metric(value);
  }
  out_ << '\n';
}

}  // namespace sscope
