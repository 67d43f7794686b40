#pragma once

// Optimization loop with a measurement schedule. Measurements always use the
// full training set, whatever the optimizer's batch size.

#include "sscope/data.hpp"
#include "sscope/diagnostics.hpp"
#include "sscope/eigensolver.hpp"
#include "sscope/nn.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sscope::train {

enum class OptimizerKind { sgd, adam, top_newton };

std::string_view to_string(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view s);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::sgd;
  double eta = 0.1;
  Eigen::Index batch_size = 64;  // 0 or >= n selects full-batch steps
  std::int64_t total_steps = 1000;

  // Measurement schedule: every measure_every steps from measure_start, plus
  // the explicit measure_steps.
  std::int64_t measure_every = 1;
  std::int64_t measure_start = 0;
  std::vector<std::int64_t> measure_steps;
  bool measure_hg = true;

  // Eigenpairs are computed at measurement steps divisible by eigen_every
  // (0 disables that rule), at eigen_steps, and at basis_snapshot_steps.
  std::int64_t eigen_every = 1;
  std::vector<std::int64_t> eigen_steps;
  std::vector<int> track_dims = {10};
  int primary_dim = 0;  // dimension reported as f_top; 0 picks the first tracked one
  std::vector<std::int64_t> basis_snapshot_steps;
  bool persist_snapshot_bases = true;

  std::uint64_t seed = 0;  // parameter init and mini-batch order

  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  double lanczos_tol = 1e-6;
  double lanczos_scale_floor = 1.0;
  Eigen::Index lanczos_max_iters = 0;

  // top_newton: pure Newton in the top newton_dim subspace; with
  // newton_hybrid the orthogonal part of the gradient takes an SGD step.
  int newton_dim = 0;  // 0 selects primary dimension
  bool newton_hybrid = false;
  double newton_min_ratio = 1e-6;

  double divergence_threshold = 1e6;

  /// Throws InvalidArgument for an inconsistent schedule.
  void validate() const;
  int max_track_dim() const;
  int resolved_primary_dim() const;
  bool is_measurement_step(std::int64_t step) const;
  bool is_eigen_step(std::int64_t step) const;
};

struct FreezeRow {
  std::int64_t t1 = 0;
  std::int64_t t2 = 0;
  std::vector<double> top;  // overlap of top-d subspaces, one per tracked dimension
  std::optional<double> next;  // overlap of eigenvectors block_dim+1..2*block_dim
};

struct FreezeAverage {
  std::int64_t t1 = 0;
  std::vector<double> top;  // mean over t2 > t1, per tracked dimension
  std::optional<double> next;
  std::size_t intervals = 0;
};

struct FreezeReport {
  std::vector<int> dims;
  int block_dim = 0;
  std::vector<FreezeRow> rows;
  std::vector<FreezeAverage> averaged;

  const FreezeRow* find(std::int64_t t1, std::int64_t t2) const;
};

/// Accumulates subspace overlaps between snapshot bases (t1) and every later
/// measured basis (t2).
class FreezeTracker {
 public:
  FreezeTracker(std::vector<int> dims, int block_dim);
  void snapshot(const EigenBasis& basis);
  void observe(const EigenBasis& basis);
  FreezeReport report() const;
  bool empty() const { return snapshots_.empty(); }

 private:
  std::vector<int> dims_;
  int block_dim_;
  std::vector<EigenBasis> snapshots_;
  std::vector<FreezeRow> rows_;
};

/// Overlap matrix over (t1, t2) from stored bases. Bases whose step is in
/// snapshot_steps act as t1; every basis with a step >= t1 acts as t2.
FreezeReport subspace_freeze_report(std::vector<EigenBasis> bases, const std::vector<std::int64_t>& snapshot_steps,
                                    const std::vector<int>& dims, int block_dim);

struct Trajectory {
  std::vector<DiagnosticsRecord> records;
  std::map<std::int64_t, EigenBasis> snapshots;
  std::optional<FreezeReport> freeze;
  std::vector<double> step_loss;  // optimizer-batch loss before each update
  ParamVector final_params;
  std::int64_t steps_completed = 0;
  bool diverged = false;
  std::string divergence_reason;
  double final_loss = 0.0;
  std::optional<double> final_accuracy;
  std::size_t lanczos_failures = 0;
};

struct TrainHooks {
  std::function<void(const DiagnosticsRecord&)> on_record;
  std::function<void(std::int64_t, const EigenBasis&)> on_basis;
  std::function<void(std::int64_t, const ParamVector&)> on_step;
};

Trajectory train(const nn::ModelSpec& spec, const data::Dataset& dataset, const TrainConfig& config,
                 const TrainHooks& hooks = {});

/// Same as train() but starting from given parameters.
Trajectory train_from(const nn::ModelSpec& spec, const data::Dataset& dataset, const TrainConfig& config,
                      ParamVector initial, const TrainHooks& hooks = {});

/// Full measurement at one point: loss, accuracy, g, Hg and a Lanczos basis of
/// size max(dims).
struct Measurement {
  DiagnosticsRecord record;
  std::optional<EigenBasis> basis;
  ParamVector gradient;
  bool lanczos_converged = true;
};

Measurement measure(const nn::ModelSpec& spec, const ParamVector& params, const data::Dataset& dataset,
                    const TrainConfig& config, std::int64_t step, bool with_eigen);

class IllConditionedBasis : public Error {
 public:
  IllConditionedBasis(Eigen::Index index, double eigenvalue, double threshold);
  Eigen::Index index;
  double eigenvalue;
};

/// params - sum_i (v_i . g / lambda_i) v_i. Throws IllConditionedBasis when
/// some lambda_i <= min_ratio * lambda_1.
ParamVector top_newton_step(const ParamVector& params, const EigenBasis& basis, const Vector& g,
                            double min_ratio = 1e-6);

/// g - eta H g.
ParamVector predicted_next_gradient(const Vector& g, const LinearOperator& hvp, double eta);

/// Mean of hg_overlap over records with step > last_step - window.
std::optional<double> mean_hg_overlap(const std::vector<DiagnosticsRecord>& records, std::int64_t window = 1000);

}  // namespace sscope::train
