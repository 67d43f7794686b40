#pragma once

// Config-driven experiments. A config is a JSON object:
//
//   {
//     "experiment": "gtop" | "freeze" | "toy" | "spectrum" | "table1" | "newton",
//     "output_dir": "runs/name",
//     "model": {...}, "data": {...}, "train": {...},
//     plus an optional section named after the experiment
//   }
//
// Parsing is strict: unknown keys and wrongly typed values are errors. See
// the README for every key and its default.

#include "sscope/data.hpp"
#include "sscope/nn.hpp"
#include "sscope/toymodel.hpp"
#include "sscope/trainer.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace sscope::experiment {

enum class ExperimentKind { gtop, freeze, toy, spectrum, table1, newton };

std::string_view to_string(ExperimentKind k);

/// Bad config. `field` is a dotted path such as "train.optimizer"; `line` is
/// 1-based, or 0 when unknown.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, int line, const std::string& message);
  std::string field;
  int line;
};

class DatasetMissing : public Error {
 public:
  using Error::Error;
};

class RunDiverged : public Error {
 public:
  RunDiverged(const std::string& reason, std::int64_t steps_completed);
  std::int64_t steps_completed;
};

struct DataConfig {
  std::string source = "mnist";  // mnist | sine | mixture
  // mnist
  std::string dir;            // empty: $SUBSPACE_SCOPE_DATA_DIR
  std::string split = "train";  // train | test
  Eigen::Index limit = 10000;   // 0 keeps everything
  std::string labels = "original";  // original | random | parity
  std::uint64_t label_seed = 0;
  // sine
  Eigen::Index n = 1000;
  double noise_sd = 0.1;
  std::uint64_t seed = 0;
  // mixture
  toy::MixtureConfig mixture;
};

struct ModelConfig {
  std::vector<Eigen::Index> hidden;
  nn::Activation activation = nn::Activation::relu;
  bool bias = true;
  std::optional<nn::LossKind> loss;  // defaults from the data source
};

struct SpectrumConfig {
  int top = 12;
  std::size_t bins = 50;
  bool dense = false;  // full spectrum by dense assembly, p <= kDenseHessianCap
  double outlier_ratio = 5.0;
  int reference_index = 11;  // outliers are eigenvalues > ratio * lambda_ref
};

struct NewtonConfig {
  std::int64_t warmup_steps = 2000;
  double warmup_eta = 0.1;
};

struct ToyConfig {
  bool default_grid = true;
  std::vector<toy::VariantConfig> variants;  // used when default_grid is false
  double eta = 0.1;
  std::int64_t steps = 5000;
  std::int64_t measure_every = 500;
};

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::gtop;
  std::filesystem::path output_dir;
  DataConfig data;
  ModelConfig model;
  train::TrainConfig train;
  SpectrumConfig spectrum;
  NewtonConfig newton;
  ToyConfig toy;
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical JSON of the fully resolved config.
std::string to_json(const ExperimentConfig& config);

data::Dataset load_dataset(const DataConfig& config);
nn::ModelSpec resolve_model(const ModelConfig& model, const data::Dataset& dataset);

struct RunOptions {
  bool force = false;
  std::optional<std::uint64_t> seed_override;
};

/// Runs the experiment and writes its artifact directory. Divergence leaves
/// a partial artifact (summary.json has "diverged": true) and then throws
/// RunDiverged.
void run(const ExperimentConfig& config, const RunOptions& options);

/// Prints a summary of an artifact directory to `out` and writes
/// whitespace-delimited series files into <dir>/series. Returns the number of
/// series files written.
std::size_t report(const std::filesystem::path& dir, std::ostream& out);

/// Machine-readable error object {"error": kind, "message": ..., ...}.
std::string error_json(const std::exception& e);

}  // namespace sscope::experiment
