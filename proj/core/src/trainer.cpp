#include "sscope/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace sscope::train {

namespace {

bool contains(const std::vector<std::int64_t>& v, std::int64_t x) { return std::find(v.begin(), v.end(), x) != v.end(); }

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

LanczosOptions lanczos_options(const TrainConfig& c, Eigen::Index m, Eigen::Index p, std::int64_t step) {
  LanczosOptions o;
  o.m = std::min(m, p);
  o.seed = mix_seed(c.seed, static_cast<std::uint64_t>(step) + 17);
  o.tol = c.lanczos_tol;
  o.scale_floor = c.lanczos_scale_floor;
  o.max_iters = c.lanczos_max_iters > 0 ? std::min(c.lanczos_max_iters, p) : 0;
  if (o.max_iters > 0 && o.max_iters < o.m) o.max_iters = o.m;
  return o;
}

EigenBasis solve_top(const nn::HessianOperator& op, const LanczosOptions& o, bool& converged) {
  const LinearOperator apply = [&op](const Vector& v) { return op.apply(v); };
  try {
    converged = true;
    return lanczos_top(apply, op.dim(), o);
  } catch (const LanczosNotConverged& e) {
    converged = false;
    return e.best();
  }
}

}  // namespace

std::string_view to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::top_newton: return "top_newton";
  }
  return "sgd";
}

OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  if (s == "top_newton") return OptimizerKind::top_newton;
  throw InvalidArgument("unknown optimizer '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  if (!(eta > 0)) throw InvalidArgument("train.eta must be positive");
  if (total_steps < 0) throw InvalidArgument("train.total_steps must be nonnegative");
  if (measure_every < 1) throw InvalidArgument("train.measure_every must be >= 1");
  if (track_dims.empty()) throw InvalidArgument("train.track_dims must not be empty");
  for (int d : track_dims)
    if (d < 1) throw InvalidArgument("train.track_dims entries must be positive");
  if (primary_dim != 0 && std::find(track_dims.begin(), track_dims.end(), primary_dim) == track_dims.end())
    throw InvalidArgument("train.primary_dim must be one of track_dims");
  if (batch_size < 0) throw InvalidArgument("train.batch_size must be nonnegative");
  if (eigen_every < 0) throw InvalidArgument("train.eigen_every must be nonnegative");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1))
    throw InvalidArgument("train.adam betas must lie in [0, 1)");
  if (!(lanczos_tol > 0)) throw InvalidArgument("train.lanczos_tol must be positive");
}

int TrainConfig::max_track_dim() const { return *std::max_element(track_dims.begin(), track_dims.end()); }

int TrainConfig::resolved_primary_dim() const { return primary_dim > 0 ? primary_dim : track_dims.front(); }

bool TrainConfig::is_eigen_step(std::int64_t s) const {
  if (contains(eigen_steps, s) || contains(basis_snapshot_steps, s)) return true;
  if (eigen_every <= 0 || s < measure_start) return false;
  return (s - measure_start) % measure_every == 0 && s % eigen_every == 0;
}

bool TrainConfig::is_measurement_step(std::int64_t s) const {
  if (contains(measure_steps, s) || is_eigen_step(s)) return true;
  return s >= measure_start && (s - measure_start) % measure_every == 0;
}

// Freeze tracking.

FreezeTracker::FreezeTracker(std::vector<int> dims, int block_dim) : dims_(std::move(dims)), block_dim_(block_dim) {}

void FreezeTracker::snapshot(const EigenBasis& basis) {
  snapshots_.push_back(basis);
  observe(basis);
}

void FreezeTracker::observe(const EigenBasis& basis) {
  for (const auto& snap : snapshots_) {
    if (basis.step < snap.step) continue;
    const bool duplicate = std::any_of(rows_.begin(), rows_.end(),
                                       [&](const FreezeRow& r) { return r.t1 == snap.step && r.t2 == basis.step; });
    if (duplicate) continue;
    FreezeRow row;
    row.t1 = snap.step;
    row.t2 = basis.step;
    for (int d : dims_) {
      const Eigen::Index k = std::min<Eigen::Index>({d, snap.size(), basis.size()});
      row.top.push_back(subspace_overlap(snap.vectors.leftCols(k), basis.vectors.leftCols(k)));
    }
    if (block_dim_ > 0 && snap.size() >= 2 * block_dim_ && basis.size() >= 2 * block_dim_)
      row.next = subspace_overlap(snap.vectors.middleCols(block_dim_, block_dim_),
                                  basis.vectors.middleCols(block_dim_, block_dim_));
    rows_.push_back(std::move(row));
  }
}

FreezeReport FreezeTracker::report() const {
  FreezeReport out;
  out.dims = dims_;
  out.block_dim = block_dim_;
  out.rows = rows_;
  std::sort(out.rows.begin(), out.rows.end(),
            [](const FreezeRow& a, const FreezeRow& b) { return std::tie(a.t1, a.t2) < std::tie(b.t1, b.t2); });
  for (const auto& snap : snapshots_) {
    FreezeAverage avg;
    avg.t1 = snap.step;
    avg.top.assign(dims_.size(), 0.0);
    double next_sum = 0.0;
    std::size_t next_count = 0;
    for (const auto& r : out.rows) {
      if (r.t1 != snap.step || r.t2 <= r.t1) continue;
      for (std::size_t i = 0; i < r.top.size(); ++i) avg.top[i] += r.top[i];
      if (r.next) {
        next_sum += *r.next;
        ++next_count;
      }
      ++avg.intervals;
    }
    if (avg.intervals == 0) continue;
    for (double& v : avg.top) v /= static_cast<double>(avg.intervals);
    if (next_count > 0) avg.next = next_sum / static_cast<double>(next_count);
    out.averaged.push_back(std::move(avg));
  }
  return out;
}

const FreezeRow* FreezeReport::find(std::int64_t t1, std::int64_t t2) const {
  for (const auto& r : rows)
    if (r.t1 == t1 && r.t2 == t2) return &r;
  return nullptr;
}

FreezeReport subspace_freeze_report(std::vector<EigenBasis> bases, const std::vector<std::int64_t>& snapshot_steps,
                                    const std::vector<int>& dims, int block_dim) {
  if (bases.size() < 2) throw InvalidArgument("subspace_freeze_report: need at least two bases");
  std::sort(bases.begin(), bases.end(), [](const EigenBasis& a, const EigenBasis& b) { return a.step < b.step; });
  FreezeTracker tracker(dims, block_dim);
  for (const auto& b : bases) {
    if (contains(snapshot_steps, b.step))
      tracker.snapshot(b);
    else
      tracker.observe(b);
  }
  return tracker.report();
}

// Measurements and updates.

Measurement measure(const nn::ModelSpec& spec, const ParamVector& params, const data::Dataset& dataset,
                    const TrainConfig& config, std::int64_t step, bool with_eigen) {
  Measurement out;
  const nn::HessianOperator op(spec, params, dataset.samples);
  out.gradient = op.gradient();
  auto& rec = out.record;
  rec.step = step;
  rec.loss = op.loss();
  if (dataset.is_classification()) rec.accuracy = op.accuracy();
  rec.hg_measured = config.measure_hg;
  if (config.measure_hg) rec.hg_overlap = hessian_gradient_overlap(out.gradient, op.apply(out.gradient));

  if (!with_eigen) return out;
  const LanczosOptions o = lanczos_options(config, config.max_track_dim(), op.dim(), step);
  EigenBasis basis = solve_top(op, o, out.lanczos_converged);
  basis.step = step;
  rec.eigen_measured = true;
  rec.eigenvalues = basis.eigenvalues;
  if (auto c = eigvec_coefficients(out.gradient, basis)) rec.c_squared = std::move(*c);
  const int primary = config.resolved_primary_dim();
  for (int d : config.track_dims) {
    const Eigen::Index k = std::min<Eigen::Index>(d, basis.size());
    const Metric f = fraction_in_subspace(out.gradient, basis.vectors.leftCols(k));
    if (d == primary)
      rec.f_top = f;
    else
      rec.f_top_by_dim.emplace_back(d, f);
  }
  out.basis = std::move(basis);
  return out;
}

IllConditionedBasis::IllConditionedBasis(Eigen::Index i, double lambda, double threshold)
    : Error("top-subspace Newton: eigenvalue " + std::to_string(i + 1) + " = " + std::to_string(lambda) +
            " is below the threshold " + std::to_string(threshold)),
      index(i),
      eigenvalue(lambda) {}

ParamVector top_newton_step(const ParamVector& params, const EigenBasis& basis, const Vector& g, double min_ratio) {
  if (basis.size() == 0) throw InvalidArgument("top_newton_step: empty basis");
  if (basis.dim() != params.size() || g.size() != params.size())
    throw InvalidArgument("top_newton_step: dimension mismatch");
  const double threshold = min_ratio * basis.eigenvalues.front();
  for (Eigen::Index i = 0; i < basis.size(); ++i) {
    const double lambda = basis.eigenvalues[static_cast<std::size_t>(i)];
    if (!(lambda > threshold) || !(lambda > 0)) throw IllConditionedBasis(i, lambda, threshold);
  }
  Vector coeff = basis.vectors.transpose() * g;
  for (Eigen::Index i = 0; i < coeff.size(); ++i) coeff[i] /= basis.eigenvalues[static_cast<std::size_t>(i)];
  return params - basis.vectors * coeff;
}

ParamVector predicted_next_gradient(const Vector& g, const LinearOperator& hvp, double eta) {
  if (eta == 0.0) return g;
  return g - eta * hvp(g);
}

std::optional<double> mean_hg_overlap(const std::vector<DiagnosticsRecord>& records, std::int64_t window) {
  if (records.empty()) return std::nullopt;
  const std::int64_t last = records.back().step;
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& r : records) {
    if (r.step <= last - window || !r.hg_overlap) continue;
    sum += *r.hg_overlap;
    ++count;
  }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

Trajectory train(const nn::ModelSpec& spec, const data::Dataset& dataset, const TrainConfig& config,
                 const TrainHooks& hooks) {
  return train_from(spec, dataset, config, nn::init_params(spec, config.seed), hooks);
}

Trajectory train_from(const nn::ModelSpec& spec, const data::Dataset& dataset, const TrainConfig& config,
                      ParamVector params, const TrainHooks& hooks) {
  config.validate();
  nn::check_batch(spec, dataset.samples);
  if (params.size() != spec.parameter_count()) throw InvalidArgument("initial parameters have wrong length");

  const Eigen::Index n = dataset.size();
  const Eigen::Index p = params.size();
  const bool full_batch = config.batch_size == 0 || config.batch_size >= n;
  const Eigen::Index b = full_batch ? n : config.batch_size;

  std::mt19937_64 shuffle_rng(mix_seed(config.seed, 1));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = static_cast<std::size_t>(n);  // forces a shuffle on first use

  Trajectory traj;
  std::optional<FreezeTracker> tracker;
  if (!config.basis_snapshot_steps.empty()) tracker.emplace(config.track_dims, config.resolved_primary_dim());

  Vector adam_m = Vector::Zero(p);
  Vector adam_v = Vector::Zero(p);
  const int newton_dim = config.newton_dim > 0 ? config.newton_dim : config.resolved_primary_dim();

  auto diverge = [&](std::string reason) {
    traj.diverged = true;
    traj.divergence_reason = std::move(reason);
  };

  for (std::int64_t step = 0; step <= config.total_steps; ++step) {
    if (config.is_measurement_step(step)) {
      try {
        Measurement m = measure(spec, params, dataset, config, step, config.is_eigen_step(step));
        if (!m.lanczos_converged) ++traj.lanczos_failures;
        if (m.basis) {
          if (tracker) {
            if (std::find(config.basis_snapshot_steps.begin(), config.basis_snapshot_steps.end(), step) !=
                config.basis_snapshot_steps.end()) {
              tracker->snapshot(*m.basis);
              traj.snapshots.emplace(step, *m.basis);
            } else {
              tracker->observe(*m.basis);
            }
          }
          if (hooks.on_basis) hooks.on_basis(step, *m.basis);
        }
        traj.records.push_back(m.record);
        if (hooks.on_record) hooks.on_record(m.record);
      } catch (const NumericOverflow& e) {
        diverge(e.what());
        break;
      }
    }
    if (step == config.total_steps) break;

    nn::Batch minibatch;
    if (!full_batch) {
      if (cursor + static_cast<std::size_t>(b) > order.size()) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        cursor = 0;
      }
      std::vector<Eigen::Index> idx(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                    order.begin() + static_cast<std::ptrdiff_t>(cursor) + b);
      cursor += static_cast<std::size_t>(b);
      minibatch = dataset.samples.rows(idx);
    }
    const nn::Batch& batch = full_batch ? dataset.samples : minibatch;

    try {
      const nn::HessianOperator op(spec, params, batch);
      const double batch_loss = op.loss();
      traj.step_loss.push_back(batch_loss);
      if (!std::isfinite(batch_loss) || batch_loss > config.divergence_threshold) {
        diverge("loss " + std::to_string(batch_loss) + " at step " + std::to_string(step));
        break;
      }
      const ParamVector& g = op.gradient();
      switch (config.optimizer) {
        case OptimizerKind::sgd:
          params -= config.eta * g;
          break;
        case OptimizerKind::adam: {
          const double t = static_cast<double>(step + 1);
          adam_m = config.adam_beta1 * adam_m + (1 - config.adam_beta1) * g;
          adam_v = config.adam_beta2 * adam_v + (1 - config.adam_beta2) * g.cwiseAbs2();
          const double c1 = 1 - std::pow(config.adam_beta1, t);
          const double c2 = 1 - std::pow(config.adam_beta2, t);
          params.array() -=
              config.eta * (adam_m.array() / c1) / ((adam_v.array() / c2).sqrt() + config.adam_epsilon);
          break;
        }
        case OptimizerKind::top_newton: {
          bool converged = true;
          const EigenBasis basis = solve_top(op, lanczos_options(config, newton_dim, p, step), converged);
          if (!converged) ++traj.lanczos_failures;
          ParamVector next = top_newton_step(params, basis, g, config.newton_min_ratio);
          if (config.newton_hybrid) {
            const Vector bulk = g - basis.vectors * (basis.vectors.transpose() * g);
            next -= config.eta * bulk;
          }
          params = std::move(next);
          break;
        }
      }
    } catch (const NumericOverflow& e) {
      diverge(e.what());
      break;
    }
    if (!params.allFinite()) {
      diverge("non-finite parameters after step " + std::to_string(step));
      break;
    }
    traj.steps_completed = step + 1;
    if (hooks.on_step) hooks.on_step(step + 1, params);
  }

  traj.final_params = params;
  if (!traj.records.empty() && traj.records.back().step == traj.steps_completed && !traj.diverged) {
    traj.final_loss = traj.records.back().loss;
    traj.final_accuracy = traj.records.back().accuracy;
  } else if (!traj.diverged) {
    const auto ev = nn::evaluate(spec, params, dataset.samples);
    traj.final_loss = ev.loss;
    if (dataset.is_classification()) traj.final_accuracy = ev.accuracy;
  } else {
    traj.final_loss = std::numeric_limits<double>::quiet_NaN();
  }
  if (tracker && !tracker->empty()) traj.freeze = tracker->report();
  return traj;
}

}  // namespace sscope::train
