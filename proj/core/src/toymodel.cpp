#include "sscope/toymodel.hpp"

#include "sscope/trainer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <random>

namespace sscope::toy {

namespace {

using nlohmann::json;

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

void check_means(const Vector& mu1, const Vector& mu2) {
  if (mu1.size() != mu2.size() || mu1.size() == 0) throw InvalidArgument("toy: means must be nonempty and equal length");
}

// Projector coefficients onto span{mu1, mu2} for orthonormal means.
Vector project(const Vector& x, const Vector& mu1, const Vector& mu2) {
  return mu1 * mu1.dot(x) + mu2 * mu2.dot(x);
}

// Least-squares c for log(eta t + c) ~ u over the points.
double fit_offset(const std::vector<double>& t, const std::vector<double>& u, double eta) {
  double c = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) c += std::exp(u[i]) - eta * t[i];
  c /= static_cast<double>(t.size());
  double t_min = t.front();
  for (double ti : t) t_min = std::min(t_min, ti);
  for (int iter = 0; iter < 100; ++iter) {
    double jtj = 0.0;
    double jtr = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double s = eta * t[i] + c;
      const double r = std::log(s) - u[i];
      const double j = 1.0 / s;
      jtj += j * j;
      jtr += j * r;
    }
    double step = jtr / jtj;
    // Keep eta t + c positive on the window.
    while (eta * t_min + c - step <= 0.0) step *= 0.5;
    c -= step;
    if (std::abs(step) <= 1e-15 * std::max(1.0, std::abs(c))) break;
  }
  return c;
}

}  // namespace

Mixture sample_mixture(const MixtureConfig& config) {
  if (config.num_classes < 2) throw InvalidArgument("mixture: num_classes must be >= 2");
  if (config.ambient_dim < 1) throw InvalidArgument("mixture: ambient_dim must be positive");
  if (!(config.sigma >= 0)) throw InvalidArgument("mixture: sigma must be nonnegative");
  if (config.samples_per_class < 1) throw InvalidArgument("mixture: samples_per_class must be positive");
  const Eigen::Index k = config.num_classes;
  const Eigen::Index d = config.ambient_dim;
  if (config.orthogonalize_means && k > d)
    throw InvalidArgument("mixture: cannot orthogonalize " + std::to_string(k) + " means in " + std::to_string(d) +
                          " dimensions");

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Mixture mix;
  mix.means.resize(d, k);
  for (Eigen::Index c = 0; c < k; ++c) {
    Vector v(d);
    for (Eigen::Index i = 0; i < d; ++i) v[i] = normal(rng);
    if (config.orthogonalize_means) {
      for (int pass = 0; pass < 2; ++pass)
        for (Eigen::Index j = 0; j < c; ++j) v -= mix.means.col(j).dot(v) * mix.means.col(j);
    }
    mix.means.col(c) = v.normalized();
  }

  const Eigen::Index n = k * config.samples_per_class;
  nn::Batch samples;
  samples.inputs.resize(n, d);
  samples.labels.resize(static_cast<std::size_t>(n));
  Eigen::Index row = 0;
  for (Eigen::Index c = 0; c < k; ++c) {
    for (Eigen::Index s = 0; s < config.samples_per_class; ++s, ++row) {
      samples.inputs.row(row) = mix.means.col(c).transpose();
      if (config.sigma > 0)
        for (Eigen::Index i = 0; i < d; ++i) samples.inputs(row, i) += config.sigma * normal(rng);
      samples.labels[static_cast<std::size_t>(row)] = static_cast<std::int32_t>(c);
    }
  }
  mix.dataset.samples = std::move(samples);
  mix.dataset.num_classes = config.num_classes;
  mix.dataset.digest = data::content_digest(mix.dataset.samples);
  json prov = {{"source", "gaussian_mixture"},
               {"num_classes", config.num_classes},
               {"ambient_dim", d},
               {"sigma", config.sigma},
               {"samples_per_class", config.samples_per_class},
               {"orthogonalize_means", config.orthogonalize_means},
               {"seed", config.seed},
               {"digest", data::digest_hex(mix.dataset.digest)}};
  mix.dataset.provenance = prov.dump();
  return mix;
}

nn::ModelSpec softmax_spec(Eigen::Index dim, int num_classes, bool use_bias) {
  nn::ModelSpec spec;
  spec.input_dim = dim;
  spec.num_outputs = num_classes;
  spec.use_bias = use_bias;
  spec.loss_kind = nn::LossKind::cross_entropy;
  spec.validate();
  return spec;
}

void AnalyticSolution::check(double tol, bool require_positive_c) const {
  const Eigen::Index d = mu1.size();
  if (d == 0 || mu2.size() != d || theta_tilde_1.size() != d || theta_tilde_2.size() != d || theta_prime.size() != d)
    throw InvalidArgument("analytic solution: vectors must share one nonzero length");
  if (require_positive_c && !(c1 > 0 && c2 > 0)) throw InvalidArgument("analytic solution: c1, c2 must be positive");
  if (!(eta > 0)) throw InvalidArgument("analytic solution: eta must be positive");
  const double worst = std::max({std::abs(theta_tilde_1.dot(mu1)), std::abs(theta_tilde_1.dot(mu2)),
                                 std::abs(theta_tilde_2.dot(mu1)), std::abs(theta_tilde_2.dot(mu2)),
                                 (theta_prime - project(theta_prime, mu1, mu2)).lpNorm<Eigen::Infinity>()});
  if (worst > tol)
    throw InvalidArgument("analytic solution: orthogonality constraints violated by " + std::to_string(worst));
}

std::pair<Vector, Vector> analytic_params(const AnalyticSolution& sol, double t) {
  const double s1 = sol.eta * t + sol.c1;
  const double s2 = sol.eta * t + sol.c2;
  if (!(s1 > 0 && s2 > 0)) throw InvalidArgument("analytic_params: eta t + c_i must be positive");
  const Vector half = 0.5 * (sol.mu1 * std::log(s1) - sol.mu2 * std::log(s2));
  return {sol.theta_tilde_1 + sol.theta_prime + half, sol.theta_tilde_2 + sol.theta_prime - half};
}

ParamVector analytic_param_vector(const AnalyticSolution& sol, double t) {
  const auto [a, b] = analytic_params(sol, t);
  ParamVector out(a.size() + b.size());
  out << a, b;
  return out;
}

std::pair<Vector, Vector> analytic_gradient(const AnalyticSolution& sol, double t) {
  const double s1 = sol.eta * t + sol.c1;
  const double s2 = sol.eta * t + sol.c2;
  if (!(s1 > 0 && s2 > 0)) throw InvalidArgument("analytic_gradient: eta t + c_i must be positive");
  Vector g1 = -sol.mu1 / (2 * s1) + sol.mu2 / (2 * s2);
  Vector g2 = -g1;
  return {std::move(g1), std::move(g2)};
}

AnalyticHessian analytic_hessian(const AnalyticSolution& sol, double t) {
  const double s1 = sol.eta * t + sol.c1;
  const double s2 = sol.eta * t + sol.c2;
  if (!(s1 > 0 && s2 > 0)) throw InvalidArgument("analytic_hessian: eta t + c_i must be positive");
  const Eigen::Index d = sol.mu1.size();
  AnalyticHessian h;
  h.block = sol.mu1 * sol.mu1.transpose() / (2 * s1) + sol.mu2 * sol.mu2.transpose() / (2 * s2);
  h.leading_order = 1.0 / (sol.eta * t);
  h.eigenvectors.resize(2 * d, 2);
  const double r = 1.0 / std::sqrt(2.0);
  Vector e1(2 * d), e2(2 * d);
  e1 << sol.mu1 * r, -sol.mu1 * r;
  e2 << sol.mu2 * r, -sol.mu2 * r;
  if (1.0 / s1 >= 1.0 / s2) {
    h.eigenvalues = {1.0 / s1, 1.0 / s2};
    h.eigenvectors << e1, e2;
  } else {
    h.eigenvalues = {1.0 / s2, 1.0 / s1};
    h.eigenvectors << e2, e1;
  }
  return h;
}

data::Dataset two_sample_dataset(const Vector& mu1, const Vector& mu2) {
  check_means(mu1, mu2);
  data::Dataset ds;
  ds.samples.inputs.resize(2, mu1.size());
  ds.samples.inputs.row(0) = mu1.transpose();
  ds.samples.inputs.row(1) = mu2.transpose();
  ds.samples.labels = {0, 1};
  ds.num_classes = 2;
  ds.digest = data::content_digest(ds.samples);
  ds.provenance = json{{"source", "two_sample"}, {"digest", data::digest_hex(ds.digest)}}.dump();
  return ds;
}

double two_sample_loss(const ParamVector& theta, const Vector& mu1, const Vector& mu2) {
  check_means(mu1, mu2);
  const Eigen::Index d = mu1.size();
  if (theta.size() != 2 * d) throw InvalidArgument("two_sample_loss: theta must have length 2d");
  const Vector diff = theta.head(d) - theta.tail(d);
  return 0.5 * softplus(-diff.dot(mu1)) + 0.5 * softplus(diff.dot(mu2));
}

NotLateTime::NotLateTime(double loss, double time)
    : Error("fit_analytic: trajectory point at t = " + std::to_string(time) + " has loss " + std::to_string(loss) +
            ", not below the late-time threshold " + std::to_string(kLateTimeLoss)),
      measured_loss(loss),
      t(time) {}

AnalyticFit fit_analytic(const std::vector<TrajectoryPoint>& trajectory, const Vector& mu1, const Vector& mu2,
                         double eta) {
  check_means(mu1, mu2);
  if (trajectory.size() < 2) throw InvalidArgument("fit_analytic: need at least two trajectory points");
  if (!(eta > 0)) throw InvalidArgument("fit_analytic: eta must be positive");
  if (std::abs(mu1.norm() - 1) > 1e-10 || std::abs(mu2.norm() - 1) > 1e-10 || std::abs(mu1.dot(mu2)) > 1e-10)
    throw InvalidArgument("fit_analytic: means must be orthonormal");
  const Eigen::Index d = mu1.size();

  std::vector<double> times, u1, u2;
  for (const auto& pt : trajectory) {
    if (pt.theta.size() != 2 * d) throw InvalidArgument("fit_analytic: theta must have length 2d");
    const double l = two_sample_loss(pt.theta, mu1, mu2);
    if (!(l < kLateTimeLoss)) throw NotLateTime(l, pt.t);
    const Vector diff = pt.theta.head(d) - pt.theta.tail(d);
    times.push_back(pt.t);
    u1.push_back(diff.dot(mu1));
    u2.push_back(-diff.dot(mu2));
  }

  AnalyticFit fit;
  auto& sol = fit.solution;
  sol.mu1 = mu1;
  sol.mu2 = mu2;
  sol.eta = eta;
  sol.c1 = fit_offset(times, u1, eta);
  sol.c2 = fit_offset(times, u2, eta);
  sol.theta_tilde_1 = Vector::Zero(d);
  sol.theta_tilde_2 = Vector::Zero(d);
  sol.theta_prime = Vector::Zero(d);
  for (const auto& pt : trajectory) {
    const Vector a = pt.theta.head(d);
    const Vector b = pt.theta.tail(d);
    sol.theta_tilde_1 += a - project(a, mu1, mu2);
    sol.theta_tilde_2 += b - project(b, mu1, mu2);
    sol.theta_prime += 0.5 * project(a + b, mu1, mu2);
  }
  const double inv = 1.0 / static_cast<double>(trajectory.size());
  sol.theta_tilde_1 *= inv;
  sol.theta_tilde_2 *= inv;
  sol.theta_prime *= inv;

  for (const auto& pt : trajectory) {
    const double r = (pt.theta - analytic_param_vector(sol, pt.t)).lpNorm<Eigen::Infinity>();
    fit.residuals.push_back(r);
    fit.max_residual = std::max(fit.max_residual, r);
  }
  return fit;
}

VariantReport run_variant(const VariantConfig& config) {
  const Mixture mix = sample_mixture(config.mixture);
  const int k = config.mixture.num_classes;
  const nn::ModelSpec spec = softmax_spec(config.mixture.ambient_dim, k, config.use_bias);

  train::TrainConfig tc;
  tc.optimizer = train::OptimizerKind::sgd;
  tc.eta = config.eta;
  tc.batch_size = 0;
  tc.total_steps = config.steps;
  tc.measure_every = config.measure_every;
  tc.measure_hg = true;
  tc.eigen_every = 1;
  tc.track_dims = {k};
  if (config.extra_eigs > 0) tc.track_dims.push_back(k + config.extra_eigs);
  tc.primary_dim = k;
  tc.seed = config.init_seed;
  // The bulk is exactly flat at sigma = 0, so convergence is judged on an
  // absolute scale as small as the top eigenvalues get.
  tc.lanczos_tol = 1e-6;
  tc.lanczos_scale_floor = 1e-6;

  const train::Trajectory traj = train::train(spec, mix.dataset, tc);

  VariantReport rep;
  rep.name = config.name;
  rep.config = config;
  rep.records = traj.records;
  rep.final_loss = traj.final_loss;
  const DiagnosticsRecord* last = nullptr;
  for (const auto& r : traj.records)
    if (r.eigen_measured) last = &r;
  if (last == nullptr) return rep;

  const auto& lam = last->eigenvalues;
  // Eigenvalues below a round-off floor relative to lambda_1 count as zero,
  // so ratios between two of them cannot win.
  const double floor = lam.empty() ? 0.0 : std::max(1e-10 * std::abs(lam.front()), 1e-300);
  double best = -1.0;
  for (std::size_t i = 0; i + 1 < lam.size(); ++i) {
    if (std::abs(lam[i]) <= floor) break;
    const double ratio = lam[i] / std::max(std::abs(lam[i + 1]), floor);
    if (ratio > best) {
      best = ratio;
      rep.top_dimension = static_cast<int>(i + 1);
    }
  }
  const std::size_t top = std::min<std::size_t>(static_cast<std::size_t>(k), lam.size());
  if (!last->c_squared.empty()) {
    const auto it = std::max_element(last->c_squared.begin(), last->c_squared.begin() + static_cast<std::ptrdiff_t>(top));
    rep.alignment_index = static_cast<int>(it - last->c_squared.begin()) + 1;
  }
  const auto it = std::min_element(lam.begin(), lam.begin() + static_cast<std::ptrdiff_t>(top));
  rep.smallest_top_index = static_cast<int>(it - lam.begin()) + 1;
  rep.min_top_eigenvalue = *it;
  rep.bulk_max_eigenvalue = lam.size() > top ? lam[top] : 0.0;
  rep.final_f_top = last->f_top;
  return rep;
}

std::vector<VariantReport> perturbation_suite(const std::vector<VariantConfig>& variants) {
  std::vector<VariantReport> out;
  out.reserve(variants.size());
  for (const auto& v : variants) out.push_back(run_variant(v));
  return out;
}

std::vector<VariantConfig> default_variants() {
  std::vector<VariantConfig> out;
  for (double sigma : {0.0, 0.02}) {
    for (bool bias : {false, true}) {
      for (int k : {2, 5, 10}) {
        VariantConfig v;
        v.name = "k" + std::to_string(k) + (sigma > 0 ? "_noisy" : "_clean") + (bias ? "_bias" : "_nobias");
        v.mixture.num_classes = k;
        v.mixture.ambient_dim = 1000;
        v.mixture.sigma = sigma;
        v.mixture.samples_per_class = sigma > 0 ? 20 : 1;
        v.mixture.orthogonalize_means = false;
        v.mixture.seed = 1000 + static_cast<std::uint64_t>(k);
        v.use_bias = bias;
        out.push_back(std::move(v));
      }
    }
  }
  return out;
}

}  // namespace sscope::toy
