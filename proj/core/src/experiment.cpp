#include "sscope/experiment.hpp"

#include "sscope/artifact.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

namespace sscope::experiment {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::int64_t kHgWindow = 1000;

// Line of the first "key" occurrence matching a dotted path, found by
// searching each component after the previous one. 0 when not found.
int line_of(const std::string& text, const std::string& path) {
  std::size_t pos = 0;
  std::size_t start = 0;
  while (start <= path.size()) {
    std::size_t dot = path.find('.', start);
    if (dot == std::string::npos) dot = path.size();
    std::string key = path.substr(start, dot - start);
    if (const auto b = key.find('['); b != std::string::npos) key.resize(b);
    const std::size_t found = text.find('"' + key + '"', pos);
    if (found == std::string::npos) return 0;
    pos = found;
    start = dot + 1;
  }
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

class Section {
 public:
  Section(const json& j, std::string path, const std::string& text) : j_(j), path_(std::move(path)), text_(text) {
    if (!j_.is_object()) fail(path_, "must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  [[noreturn]] void fail(const std::string& field, const std::string& message) const {
    throw ConfigError(field, line_of(text_, field), message);
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* take(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void get(const std::string& key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) fail(field(key), "must be a number");
      out = v->get<double>();
      if (!std::isfinite(out)) fail(field(key), "must be finite");
    }
  }

  template <class Int>
    requires std::is_integral_v<Int>
  void get(const std::string& key, Int& out) {
    if (const json* v = take(key)) out = as_int<Int>(*v, field(key));
  }

  void get(const std::string& key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) fail(field(key), "must be true or false");
      out = v->get<bool>();
    }
  }

  void get(const std::string& key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) fail(field(key), "must be a string");
      out = v->get<std::string>();
    }
  }

  template <class Int>
  void get(const std::string& key, std::vector<Int>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) fail(field(key), "must be an array of integers");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i)
        out.push_back(as_int<Int>((*v)[i], field(key) + "[" + std::to_string(i) + "]"));
    }
  }

  template <class Enum, class Parse>
  void get_enum(const std::string& key, Enum& out, Parse parse) {
    std::string s;
    const json* v = take(key);
    if (v == nullptr) return;
    if (!v->is_string()) fail(field(key), "must be a string");
    try {
      out = parse(v->get<std::string>());
    } catch (const InvalidArgument& e) {
      fail(field(key), e.what());
    }
  }

  std::optional<Section> child(const std::string& key) {
    const json* v = take(key);
    if (v == nullptr) return std::nullopt;
    return Section(*v, field(key), text_);
  }

  // Rejects keys that were never asked for.
  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) fail(field(key), "unknown key");
  }

  const std::string& text() const { return text_; }

 private:
  template <class Int>
  Int as_int(const json& v, const std::string& f) const {
    if (!v.is_number_integer()) fail(f, "must be an integer");
    if constexpr (std::is_unsigned_v<Int>) {
      if (v.is_number_unsigned()) return static_cast<Int>(v.get<std::uint64_t>());
      if (v.get<std::int64_t>() < 0) fail(f, "must be nonnegative");
      return static_cast<Int>(v.get<std::int64_t>());
    } else {
      if (v.is_number_unsigned() && v.get<std::uint64_t>() > static_cast<std::uint64_t>(std::numeric_limits<Int>::max()))
        fail(f, "is out of range");
      return static_cast<Int>(v.get<std::int64_t>());
    }
  }

  const json& j_;
  std::string path_;
  const std::string& text_;
  std::set<std::string> seen_;
};

ExperimentKind parse_kind(std::string_view s) {
  for (auto k : {ExperimentKind::gtop, ExperimentKind::freeze, ExperimentKind::toy, ExperimentKind::spectrum,
                 ExperimentKind::table1, ExperimentKind::newton})
    if (to_string(k) == s) return k;
  throw InvalidArgument("unknown experiment '" + std::string(s) +
                        "' (expected gtop, freeze, toy, spectrum, table1 or newton)");
}

void parse_mixture(Section& s, toy::MixtureConfig& m) {
  s.get("num_classes", m.num_classes);
  s.get("ambient_dim", m.ambient_dim);
  s.get("sigma", m.sigma);
  s.get("samples_per_class", m.samples_per_class);
  s.get("orthogonalize_means", m.orthogonalize_means);
  s.get("seed", m.seed);
}

void parse_data(Section& s, DataConfig& d) {
  s.get("source", d.source);
  if (d.source == "mnist") {
    s.get("dir", d.dir);
    s.get("split", d.split);
    s.get("limit", d.limit);
    s.get("labels", d.labels);
    s.get("label_seed", d.label_seed);
    if (d.split != "train" && d.split != "test") s.fail(s.field("split"), "must be \"train\" or \"test\"");
    if (d.labels != "original" && d.labels != "random" && d.labels != "parity")
      s.fail(s.field("labels"), "must be \"original\", \"random\" or \"parity\"");
    if (d.limit < 0) s.fail(s.field("limit"), "must be nonnegative");
  } else if (d.source == "sine") {
    s.get("n", d.n);
    s.get("noise_sd", d.noise_sd);
    s.get("seed", d.seed);
    if (d.n < 1) s.fail(s.field("n"), "must be positive");
    if (d.noise_sd < 0) s.fail(s.field("noise_sd"), "must be nonnegative");
  } else if (d.source == "mixture") {
    parse_mixture(s, d.mixture);
  } else {
    s.fail(s.field("source"), "must be \"mnist\", \"sine\" or \"mixture\"");
  }
  s.finish();
}

void parse_model(Section& s, ModelConfig& m) {
  s.get("hidden", m.hidden);
  s.get_enum("activation", m.activation, nn::parse_activation);
  s.get("bias", m.bias);
  if (s.has("loss")) {
    nn::LossKind k{};
    s.get_enum("loss", k, nn::parse_loss_kind);
    m.loss = k;
  }
  for (auto w : m.hidden)
    if (w < 1) s.fail(s.field("hidden"), "widths must be positive");
  s.finish();
}

void parse_train(Section& s, train::TrainConfig& t) {
  s.get_enum("optimizer", t.optimizer, train::parse_optimizer);
  s.get("eta", t.eta);
  s.get("batch_size", t.batch_size);
  s.get("total_steps", t.total_steps);
  s.get("measure_every", t.measure_every);
  s.get("measure_start", t.measure_start);
  s.get("measure_steps", t.measure_steps);
  s.get("measure_hg", t.measure_hg);
  s.get("eigen_every", t.eigen_every);
  s.get("eigen_steps", t.eigen_steps);
  s.get("track_dims", t.track_dims);
  s.get("primary_dim", t.primary_dim);
  s.get("basis_snapshot_steps", t.basis_snapshot_steps);
  s.get("persist_snapshot_bases", t.persist_snapshot_bases);
  s.get("seed", t.seed);
  s.get("adam_beta1", t.adam_beta1);
  s.get("adam_beta2", t.adam_beta2);
  s.get("adam_epsilon", t.adam_epsilon);
  s.get("lanczos_tol", t.lanczos_tol);
  s.get("lanczos_scale_floor", t.lanczos_scale_floor);
  s.get("lanczos_max_iters", t.lanczos_max_iters);
  s.get("newton_dim", t.newton_dim);
  s.get("newton_hybrid", t.newton_hybrid);
  s.get("newton_min_ratio", t.newton_min_ratio);
  s.get("divergence_threshold", t.divergence_threshold);
  s.finish();
  try {
    t.validate();
  } catch (const InvalidArgument& e) {
    std::string msg = e.what();
    std::string f = "train";
    if (msg.rfind("train.", 0) == 0) {
      const auto space = msg.find(' ');
      f = msg.substr(0, space);
    }
    s.fail(f, msg);
  }
}

toy::VariantConfig parse_variant(Section& s, const ToyConfig& defaults) {
  toy::VariantConfig v;
  v.eta = defaults.eta;
  v.steps = defaults.steps;
  v.measure_every = defaults.measure_every;
  s.get("name", v.name);
  parse_mixture(s, v.mixture);
  s.get("bias", v.use_bias);
  s.get("eta", v.eta);
  s.get("steps", v.steps);
  s.get("measure_every", v.measure_every);
  s.get("extra_eigs", v.extra_eigs);
  s.get("init_seed", v.init_seed);
  if (v.name.empty()) s.fail(s.field("name"), "is required");
  s.finish();
  return v;
}

void parse_toy(Section& s, ToyConfig& t) {
  s.get("default_grid", t.default_grid);
  s.get("eta", t.eta);
  s.get("steps", t.steps);
  s.get("measure_every", t.measure_every);
  if (const json* list = s.take("variants")) {
    if (!list->is_array()) s.fail(s.field("variants"), "must be an array");
    for (std::size_t i = 0; i < list->size(); ++i) {
      Section v((*list)[i], s.field("variants") + "[" + std::to_string(i) + "]", s.text());
      t.variants.push_back(parse_variant(v, t));
    }
    if (!s.has("default_grid")) t.default_grid = false;
  }
  if (!t.default_grid && t.variants.empty()) s.fail(s.field("variants"), "must list variants when default_grid is false");
  s.finish();
}

json mixture_json(const toy::MixtureConfig& m) {
  return {{"num_classes", m.num_classes},
          {"ambient_dim", m.ambient_dim},
          {"sigma", m.sigma},
          {"samples_per_class", m.samples_per_class},
          {"orthogonalize_means", m.orthogonalize_means},
          {"seed", m.seed}};
}

json train_json(const train::TrainConfig& t) {
  return {{"optimizer", train::to_string(t.optimizer)},
          {"eta", t.eta},
          {"batch_size", t.batch_size},
          {"total_steps", t.total_steps},
          {"measure_every", t.measure_every},
          {"measure_start", t.measure_start},
          {"measure_steps", t.measure_steps},
          {"measure_hg", t.measure_hg},
          {"eigen_every", t.eigen_every},
          {"eigen_steps", t.eigen_steps},
          {"track_dims", t.track_dims},
          {"primary_dim", t.resolved_primary_dim()},
          {"basis_snapshot_steps", t.basis_snapshot_steps},
          {"persist_snapshot_bases", t.persist_snapshot_bases},
          {"seed", t.seed},
          {"adam_beta1", t.adam_beta1},
          {"adam_beta2", t.adam_beta2},
          {"adam_epsilon", t.adam_epsilon},
          {"lanczos_tol", t.lanczos_tol},
          {"lanczos_scale_floor", t.lanczos_scale_floor},
          {"lanczos_max_iters", t.lanczos_max_iters},
          {"newton_dim", t.newton_dim},
          {"newton_hybrid", t.newton_hybrid},
          {"newton_min_ratio", t.newton_min_ratio},
          {"divergence_threshold", t.divergence_threshold}};
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

bool has_eigen_schedule(const train::TrainConfig& t) {
  return t.eigen_every > 0 || !t.eigen_steps.empty() || !t.basis_snapshot_steps.empty();
}

std::vector<int> extra_dims(const train::TrainConfig& t) {
  std::vector<int> out;
  for (int d : t.track_dims)
    if (d != t.resolved_primary_dim()) out.push_back(d);
  return out;
}

struct RunOutput {
  train::Trajectory trajectory;
  json summary;
};

json base_summary(const ExperimentConfig& cfg, const train::Trajectory& traj, const data::Dataset& ds,
                  Eigen::Index params) {
  json s;
  s["experiment"] = to_string(cfg.experiment);
  s["steps_completed"] = traj.steps_completed;
  s["diverged"] = traj.diverged;
  if (traj.diverged) s["divergence_reason"] = traj.divergence_reason;
  s["final_loss"] = std::isfinite(traj.final_loss) ? json(traj.final_loss) : json(nullptr);
  s["final_accuracy"] = optional_json(traj.final_accuracy);
  s["mean_hg_overlap_last_1000"] = optional_json(train::mean_hg_overlap(traj.records, kHgWindow));
  s["hg_window_steps"] = kHgWindow;
  s["measurement_gradient"] = "full_dataset";
  s["num_records"] = traj.records.size();
  s["lanczos_failures"] = traj.lanczos_failures;
  s["parameter_count"] = params;
  s["seed"] = cfg.train.seed;
  s["dataset"] = json::parse(ds.provenance);
  return s;
}

// Trains with streaming metrics and snapshot persistence.
train::Trajectory train_into(const fs::path& dir, const nn::ModelSpec& spec, const data::Dataset& ds,
                             const train::TrainConfig& tc, const ParamVector* initial) {
  std::ofstream metrics(dir / "metrics.csv", std::ios::trunc);
  if (!metrics) throw Error("cannot write " + (dir / "metrics.csv").string());
  MetricsCsvWriter writer(metrics, has_eigen_schedule(tc) ? static_cast<std::size_t>(tc.max_track_dim()) : 0,
                          extra_dims(tc));
  train::TrainHooks hooks;
  hooks.on_record = [&](const DiagnosticsRecord& r) {
    writer.write(r);
    metrics.flush();
  };
  hooks.on_basis = [&](std::int64_t step, const EigenBasis& basis) {
    if (tc.persist_snapshot_bases && std::count(tc.basis_snapshot_steps.begin(), tc.basis_snapshot_steps.end(), step)) {
      fs::create_directories(dir / "bases");
      save_basis(basis, artifact::basis_path(dir, step));
    }
  };
  train::Trajectory traj = initial ? train::train_from(spec, ds, tc, *initial, hooks) : train::train(spec, ds, tc, hooks);
  if (traj.freeze) artifact::write_freeze_csv(dir / "freeze.csv", dir / "freeze_avg.csv", *traj.freeze);
  return traj;
}

void write_summary(const fs::path& dir, const json& summary) {
  artifact::write_text(dir / "summary.json", summary.dump(2) + "\n");
}

void finish_run(const fs::path& dir, const train::Trajectory& traj, const json& summary) {
  write_summary(dir, summary);
  if (traj.diverged) throw RunDiverged(traj.divergence_reason, traj.steps_completed);
}

void run_toy(const ExperimentConfig& cfg) {
  std::vector<toy::VariantConfig> variants = cfg.toy.variants;
  if (cfg.toy.default_grid) {
    variants = toy::default_variants();
    for (auto& v : variants) {
      v.eta = cfg.toy.eta;
      v.steps = cfg.toy.steps;
      v.measure_every = cfg.toy.measure_every;
    }
  }
  json summary;
  summary["experiment"] = "toy";
  summary["variants"] = json::array();
  for (const auto& v : variants) {
    const toy::VariantReport rep = toy::run_variant(v);
    const fs::path vdir = cfg.output_dir / "toy" / v.name;
    fs::create_directories(vdir);
    std::ofstream out(vdir / "metrics.csv", std::ios::trunc);
    const int k = v.mixture.num_classes;
    std::vector<int> extra;
    if (v.extra_eigs > 0) extra.push_back(k + v.extra_eigs);
    MetricsCsvWriter writer(out, static_cast<std::size_t>(k + std::max(v.extra_eigs, 0)), extra);
    for (const auto& r : rep.records) writer.write(r);
    json item = {{"name", v.name},
                 {"mixture", mixture_json(v.mixture)},
                 {"bias", v.use_bias},
                 {"eta", v.eta},
                 {"steps", v.steps},
                 {"top_dimension", rep.top_dimension},
                 {"alignment_index", rep.alignment_index},
                 {"smallest_top_index", rep.smallest_top_index},
                 {"bulk_max_eigenvalue", rep.bulk_max_eigenvalue},
                 {"min_top_eigenvalue", rep.min_top_eigenvalue},
                 {"final_f_top", optional_json(rep.final_f_top)},
                 {"final_loss", rep.final_loss}};
    summary["variants"].push_back(std::move(item));
  }
  write_summary(cfg.output_dir, summary);
}

void run_spectrum(const ExperimentConfig& cfg, const data::Dataset& ds, const nn::ModelSpec& spec) {
  train::Trajectory traj = train_into(cfg.output_dir, spec, ds, cfg.train, nullptr);
  json summary = base_summary(cfg, traj, ds, spec.parameter_count());
  if (traj.diverged) finish_run(cfg.output_dir, traj, summary);

  const nn::HessianOperator op(spec, traj.final_params, ds.samples);
  LanczosOptions o;
  o.m = std::min<Eigen::Index>(cfg.spectrum.top, op.dim());
  o.seed = cfg.train.seed + 7;
  o.tol = cfg.train.lanczos_tol;
  o.scale_floor = cfg.train.lanczos_scale_floor;
  EigenBasis top;
  bool converged = true;
  try {
    top = lanczos_top([&op](const Vector& v) { return op.apply(v); }, op.dim(), o);
  } catch (const LanczosNotConverged& e) {
    top = e.best();
    converged = false;
  }
  {
    std::ofstream out(cfg.output_dir / "spectrum_top.csv", std::ios::trunc);
    out << "index,eigenvalue\n";
    for (std::size_t i = 0; i < top.eigenvalues.size(); ++i) out << i + 1 << ',' << format_metric(top.eigenvalues[i]) << '\n';
  }
  summary["spectrum_top"] = top.eigenvalues;
  summary["spectrum_converged"] = converged;
  const int ref = cfg.spectrum.reference_index;
  if (ref >= 1 && static_cast<std::size_t>(ref) <= top.eigenvalues.size()) {
    const double threshold = cfg.spectrum.outlier_ratio * top.eigenvalues[static_cast<std::size_t>(ref - 1)];
    summary["outliers"] = std::count_if(top.eigenvalues.begin(), top.eigenvalues.end(),
                                        [&](double l) { return l > threshold; });
    summary["outlier_threshold"] = threshold;
  }
  if (cfg.spectrum.dense) {
    const Spectrum full = full_spectrum(dense_hessian(spec, traj.final_params, ds.samples));
    std::ofstream out(cfg.output_dir / "spectrum_full.csv", std::ios::trunc);
    out << "index,eigenvalue\n";
    for (std::size_t i = 0; i < full.eigenvalues.size(); ++i)
      out << i + 1 << ',' << format_metric(full.eigenvalues[i]) << '\n';
    const Histogram h = spectrum_histogram(full.eigenvalues, cfg.spectrum.bins, HistogramScale::linear);
    std::ofstream hist(cfg.output_dir / "histogram.csv", std::ios::trunc);
    hist << "lo,hi,count\n";
    for (std::size_t i = 0; i < h.counts.size(); ++i)
      hist << format_metric(h.edges[i]) << ',' << format_metric(h.edges[i + 1]) << ',' << format_metric(h.counts[i]) << '\n';
  }
  finish_run(cfg.output_dir, traj, summary);
}

void run_newton(const ExperimentConfig& cfg, const data::Dataset& ds, const nn::ModelSpec& spec) {
  train::TrainConfig warm = cfg.train;
  warm.optimizer = train::OptimizerKind::sgd;
  warm.eta = cfg.newton.warmup_eta;
  warm.total_steps = cfg.newton.warmup_steps;
  warm.measure_steps.clear();
  warm.eigen_steps.clear();
  warm.basis_snapshot_steps.clear();
  warm.eigen_every = 0;
  warm.measure_start = warm.total_steps + 1;
  const train::Trajectory warmup = train::train(spec, ds, warm);
  if (warmup.diverged) throw RunDiverged("warm-up: " + warmup.divergence_reason, warmup.steps_completed);

  train::TrainConfig tc = cfg.train;
  tc.optimizer = train::OptimizerKind::top_newton;
  train::Trajectory traj = train_into(cfg.output_dir, spec, ds, tc, &warmup.final_params);
  std::vector<double> losses = traj.step_loss;
  if (!traj.diverged) losses.push_back(traj.final_loss);
  {
    std::ofstream out(cfg.output_dir / "newton_loss.csv", std::ios::trunc);
    out << "step,loss\n";
    for (std::size_t i = 0; i < losses.size(); ++i) out << i << ',' << format_metric(losses[i]) << '\n';
  }
  bool monotone = losses.size() >= 2;
  for (std::size_t i = 1; i < losses.size(); ++i) monotone = monotone && losses[i] < losses[i - 1];
  json summary = base_summary(cfg, traj, ds, spec.parameter_count());
  summary["warmup_steps"] = cfg.newton.warmup_steps;
  summary["warmup_final_loss"] = warmup.final_loss;
  summary["monotone_decrease"] = monotone;
  finish_run(cfg.output_dir, traj, summary);
}

void write_series(const fs::path& path, const artifact::Table& t, const std::vector<int>& cols, std::size_t& count) {
  std::ofstream out(path, std::ios::trunc);
  out << std::setprecision(17);
  out << '#';
  for (int c : cols) out << ' ' << t.columns[static_cast<std::size_t>(c)];
  out << '\n';
  for (const auto& row : t.rows) {
    bool any = false;
    for (std::size_t i = 1; i < cols.size(); ++i) any = any || std::isfinite(row[static_cast<std::size_t>(cols[i])]);
    if (!any) continue;
    for (std::size_t i = 0; i < cols.size(); ++i) {
      if (i > 0) out << ' ';
      const double v = row[static_cast<std::size_t>(cols[i])];
      if (std::isfinite(v))
        out << v;
      else
        out << "NaN";
    }
    out << '\n';
  }
  ++count;
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::setprecision(6) << v;
  return ss.str();
}

std::string fmt(const json& v) { return v.is_number() ? fmt(v.get<double>()) : std::string("n/a"); }

std::size_t report_metrics(const fs::path& dir, const fs::path& series, std::ostream& out) {
  const fs::path metrics = dir / "metrics.csv";
  if (!fs::exists(metrics)) throw Error("missing " + metrics.string());
  const artifact::Table t = artifact::read_csv(metrics);
  if (t.rows.empty())
    throw Error(metrics.string() + " has no rows: the run recorded no measurement steps, so there is nothing to report");
  const int step = t.find("step");
  if (step < 0) throw Error(metrics.string() + " has no step column");

  std::size_t count = 0;
  fs::create_directories(series);
  for (const char* name : {"loss", "accuracy", "f_top", "hg_overlap"}) {
    const int c = t.find(name);
    if (c >= 0) write_series(series / (std::string(name) + ".dat"), t, {step, c}, count);
  }
  std::vector<int> lambda_cols{step};
  std::vector<int> ftop_cols{step};
  for (std::size_t i = 0; i < t.columns.size(); ++i) {
    if (t.columns[i].rfind("lambda_", 0) == 0) lambda_cols.push_back(static_cast<int>(i));
    if (t.columns[i].rfind("f_top", 0) == 0) ftop_cols.push_back(static_cast<int>(i));
  }
  if (lambda_cols.size() > 1) write_series(series / "eigenvalues.dat", t, lambda_cols, count);
  if (ftop_cols.size() > 2) write_series(series / "f_top_dims.dat", t, ftop_cols, count);

  const int hg = t.find("hg_overlap");
  const double last_step = t.rows.back()[static_cast<std::size_t>(step)];
  double sum = 0.0;
  std::size_t n = 0;
  if (hg >= 0) {
    for (const auto& row : t.rows) {
      const double v = row[static_cast<std::size_t>(hg)];
      if (row[static_cast<std::size_t>(step)] > last_step - kHgWindow && std::isfinite(v)) {
        sum += v;
        ++n;
      }
    }
  }
  out << "measurements: " << t.rows.size() << " (steps " << fmt(t.rows.front()[static_cast<std::size_t>(step)])
      << " to " << fmt(last_step) << ")\n";
  if (n > 0)
    out << "mean overlap(g, Hg) over the last " << kHgWindow << " steps: " << fmt(sum / static_cast<double>(n)) << " ("
        << n << " measurements)\n";
  else
    out << "mean overlap(g, Hg) over the last " << kHgWindow << " steps: n/a\n";
  const int ftop = t.find("f_top");
  if (ftop >= 0) {
    for (auto it = t.rows.rbegin(); it != t.rows.rend(); ++it) {
      const double v = (*it)[static_cast<std::size_t>(ftop)];
      if (std::isfinite(v)) {
        out << "last f_top: " << fmt(v) << " at step " << fmt((*it)[static_cast<std::size_t>(step)]) << '\n';
        break;
      }
    }
  }
  return count;
}

std::size_t report_freeze(const fs::path& dir, const fs::path& series, std::ostream& out) {
  std::size_t count = 0;
  if (fs::exists(dir / "freeze.csv")) {
    const artifact::Table t = artifact::read_csv(dir / "freeze.csv");
    int next = -1;
    for (std::size_t i = 0; i < t.columns.size(); ++i)
      if (t.columns[i].rfind("next_", 0) == 0) next = static_cast<int>(i);
    const int top = next >= 0 ? t.find("top_d" + t.columns[static_cast<std::size_t>(next)].substr(5)) : -1;
    std::set<double> t1s;
    for (const auto& r : t.rows) t1s.insert(r[0]);
    for (double t1 : t1s) {
      artifact::Table sub;
      sub.columns = t.columns;
      for (const auto& r : t.rows)
        if (r[0] == t1) sub.rows.push_back(r);
      std::vector<int> cols{1};
      if (top >= 0) cols.push_back(top);
      if (next >= 0) cols.push_back(next);
      write_series(series / ("freeze_t1_" + fmt(t1) + ".dat"), sub, cols, count);
    }
    out << "freeze: " << t.rows.size() << " overlap rows for " << t1s.size() << " snapshot steps\n";
  }
  if (fs::exists(dir / "freeze_avg.csv")) {
    const artifact::Table t = artifact::read_csv(dir / "freeze_avg.csv");
    std::ofstream f(series / "freeze_dims.dat", std::ios::trunc);
    f << std::setprecision(17) << "# dim";
    for (const auto& r : t.rows) f << " t1=" << r[0];
    f << '\n';
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      if (t.columns[c].rfind("top_d", 0) != 0) continue;
      f << t.columns[c].substr(5);
      for (const auto& r : t.rows) f << ' ' << r[c];
      f << '\n';
    }
    ++count;
  }
  return count;
}

}  // namespace

std::string_view to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::gtop: return "gtop";
    case ExperimentKind::freeze: return "freeze";
    case ExperimentKind::toy: return "toy";
    case ExperimentKind::spectrum: return "spectrum";
    case ExperimentKind::table1: return "table1";
    case ExperimentKind::newton: return "newton";
  }
  return "gtop";
}

ConfigError::ConfigError(std::string f, int l, const std::string& message)
    : Error((l > 0 ? "line " + std::to_string(l) + ": " : std::string()) + (f.empty() ? "" : f + ": ") + message),
      field(std::move(f)),
      line(l) {}

RunDiverged::RunDiverged(const std::string& reason, std::int64_t steps)
    : Error("training diverged: " + reason), steps_completed(steps) {}

ExperimentConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto byte = std::min<std::size_t>(e.byte, text.size());
    const int line =
        1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte > 0 ? byte - 1 : 0), '\n'));
    throw ConfigError("", line, std::string("invalid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  Section top(root, "", text);
  std::string description;
  top.get("description", description);
  if (!top.has("experiment")) top.fail("experiment", "is required");
  top.get_enum("experiment", cfg.experiment, parse_kind);
  std::string out;
  top.get("output_dir", out);
  if (out.empty()) top.fail("output_dir", "is required");
  cfg.output_dir = out;

  const bool toy = cfg.experiment == ExperimentKind::toy;
  if (auto s = top.child("data")) parse_data(*s, cfg.data);
  if (auto s = top.child("model")) parse_model(*s, cfg.model);
  if (auto s = top.child("train")) parse_train(*s, cfg.train);
  if (auto s = top.child("spectrum")) {
    s->get("top", cfg.spectrum.top);
    s->get("bins", cfg.spectrum.bins);
    s->get("dense", cfg.spectrum.dense);
    s->get("outlier_ratio", cfg.spectrum.outlier_ratio);
    s->get("reference_index", cfg.spectrum.reference_index);
    if (cfg.spectrum.top < 1) s->fail(s->field("top"), "must be positive");
    if (cfg.spectrum.bins < 1) s->fail(s->field("bins"), "must be positive");
    s->finish();
  }
  if (auto s = top.child("newton")) {
    s->get("warmup_steps", cfg.newton.warmup_steps);
    s->get("warmup_eta", cfg.newton.warmup_eta);
    if (cfg.newton.warmup_steps < 0) s->fail(s->field("warmup_steps"), "must be nonnegative");
    if (!(cfg.newton.warmup_eta > 0)) s->fail(s->field("warmup_eta"), "must be positive");
    s->finish();
  }
  if (auto s = top.child("toy")) parse_toy(*s, cfg.toy);
  top.finish();

  if (cfg.experiment == ExperimentKind::freeze && cfg.train.basis_snapshot_steps.empty())
    top.fail("train.basis_snapshot_steps", "freeze experiments need at least one snapshot step");
  if (toy)
    for (const char* key : {"data", "model", "train"})
      if (top.has(key)) top.fail(key, "toy experiments are configured in the toy section only");
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", 0, "cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_json(const ExperimentConfig& cfg) {
  json j;
  j["experiment"] = to_string(cfg.experiment);
  j["output_dir"] = cfg.output_dir.string();
  if (cfg.experiment == ExperimentKind::toy) {
    json t = {{"default_grid", cfg.toy.default_grid},
              {"eta", cfg.toy.eta},
              {"steps", cfg.toy.steps},
              {"measure_every", cfg.toy.measure_every},
              {"variants", json::array()}};
    for (const auto& v : cfg.toy.variants) {
      json item = mixture_json(v.mixture);
      item["name"] = v.name;
      item["bias"] = v.use_bias;
      item["eta"] = v.eta;
      item["steps"] = v.steps;
      item["measure_every"] = v.measure_every;
      item["extra_eigs"] = v.extra_eigs;
      item["init_seed"] = v.init_seed;
      t["variants"].push_back(std::move(item));
    }
    j["toy"] = std::move(t);
    return j.dump(2) + "\n";
  }
  json d = {{"source", cfg.data.source}};
  if (cfg.data.source == "mnist") {
    d["dir"] = cfg.data.dir;
    d["split"] = cfg.data.split;
    d["limit"] = cfg.data.limit;
    d["labels"] = cfg.data.labels;
    d["label_seed"] = cfg.data.label_seed;
  } else if (cfg.data.source == "sine") {
    d["n"] = cfg.data.n;
    d["noise_sd"] = cfg.data.noise_sd;
    d["seed"] = cfg.data.seed;
  } else {
    d.update(mixture_json(cfg.data.mixture));
  }
  j["data"] = std::move(d);
  json m = {{"hidden", cfg.model.hidden}, {"activation", nn::to_string(cfg.model.activation)}, {"bias", cfg.model.bias}};
  m["loss"] = nn::to_string(cfg.model.loss.value_or(cfg.data.source == "sine" ? nn::LossKind::mean_squared_error
                                                                            : nn::LossKind::cross_entropy));
  j["model"] = std::move(m);
  j["train"] = train_json(cfg.train);
  if (cfg.experiment == ExperimentKind::spectrum)
    j["spectrum"] = {{"top", cfg.spectrum.top},
                     {"bins", cfg.spectrum.bins},
                     {"dense", cfg.spectrum.dense},
                     {"outlier_ratio", cfg.spectrum.outlier_ratio},
                     {"reference_index", cfg.spectrum.reference_index}};
  if (cfg.experiment == ExperimentKind::newton)
    j["newton"] = {{"warmup_steps", cfg.newton.warmup_steps}, {"warmup_eta", cfg.newton.warmup_eta}};
  return j.dump(2) + "\n";
}

data::Dataset load_dataset(const DataConfig& cfg) {
  if (cfg.source == "sine") return data::sine_regression(cfg.n, cfg.noise_sd, cfg.seed);
  if (cfg.source == "mixture") return toy::sample_mixture(cfg.mixture).dataset;

  fs::path dir = cfg.dir;
  if (dir.empty()) {
    const char* env = std::getenv("SUBSPACE_SCOPE_DATA_DIR");
    if (env == nullptr || *env == '\0')
      throw DatasetMissing("MNIST location unknown: set data.dir or SUBSPACE_SCOPE_DATA_DIR");
    dir = env;
  }
  const std::string prefix = cfg.split == "train" ? "train" : "t10k";
  const fs::path images = dir / (prefix + "-images-idx3-ubyte");
  const fs::path labels = dir / (prefix + "-labels-idx1-ubyte");
  for (const auto& p : {images, labels})
    if (!fs::exists(p)) throw DatasetMissing("MNIST file not found: " + p.string());
  data::Dataset ds = data::load_mnist_idx(images, labels, cfg.limit);
  if (cfg.labels == "random") return data::permute_labels(ds, cfg.label_seed);
  if (cfg.labels == "parity") return data::relabel_parity(ds);
  return ds;
}

nn::ModelSpec resolve_model(const ModelConfig& model, const data::Dataset& ds) {
  nn::ModelSpec spec;
  spec.input_dim = ds.input_dim();
  spec.hidden_widths = model.hidden;
  spec.activation = model.activation;
  spec.use_bias = model.bias;
  spec.loss_kind = model.loss.value_or(ds.is_classification() ? nn::LossKind::cross_entropy
                                                               : nn::LossKind::mean_squared_error);
  if (spec.loss_kind == nn::LossKind::cross_entropy) {
    if (!ds.is_classification()) throw ConfigError("model.loss", 0, "cross_entropy needs a classification dataset");
    spec.num_outputs = ds.num_classes;
  } else {
    spec.num_outputs = ds.is_classification() ? ds.num_classes : ds.samples.targets.cols();
  }
  spec.validate();
  return spec;
}

void run(const ExperimentConfig& input, const RunOptions& options) {
  ExperimentConfig cfg = input;
  if (options.seed_override) cfg.train.seed = *options.seed_override;

  if (cfg.experiment == ExperimentKind::toy) {
    artifact::prepare_output_dir(cfg.output_dir, options.force);
    artifact::write_text(cfg.output_dir / "config.json", to_json(cfg));
    run_toy(cfg);
    return;
  }

  const data::Dataset ds = load_dataset(cfg.data);
  data::Dataset labelled = ds;
  nn::ModelSpec spec = resolve_model(cfg.model, ds);
  if (spec.loss_kind == nn::LossKind::mean_squared_error && ds.is_classification() && labelled.samples.targets.size() == 0) {
    // One-hot targets for squared loss on labelled data.
    labelled.samples.targets = Matrix::Zero(ds.size(), ds.num_classes);
    for (Eigen::Index i = 0; i < ds.size(); ++i) labelled.samples.targets(i, ds.samples.labels[static_cast<std::size_t>(i)]) = 1.0;
    labelled.samples.labels.clear();
    labelled.num_classes = 0;
  }
  cfg.model.loss = spec.loss_kind;

  artifact::prepare_output_dir(cfg.output_dir, options.force);
  artifact::write_text(cfg.output_dir / "config.json", to_json(cfg));

  switch (cfg.experiment) {
    case ExperimentKind::spectrum:
      run_spectrum(cfg, labelled, spec);
      return;
    case ExperimentKind::newton:
      run_newton(cfg, labelled, spec);
      return;
    default: {
      const train::Trajectory traj = train_into(cfg.output_dir, spec, labelled, cfg.train, nullptr);
      finish_run(cfg.output_dir, traj, base_summary(cfg, traj, labelled, spec.parameter_count()));
    }
  }
}

std::size_t report(const fs::path& dir, std::ostream& out) {
  if (!fs::is_directory(dir)) throw Error("not an artifact directory: " + dir.string());
  json summary;
  if (fs::exists(dir / "summary.json")) summary = json::parse(artifact::read_text(dir / "summary.json"));
  const fs::path series = dir / "series";
  const std::string kind = summary.is_object() ? summary.value("experiment", std::string("unknown")) : "unknown";
  out << "experiment: " << kind << '\n';

  if (kind == "toy") {
    if (!summary.contains("variants") || summary["variants"].empty())
      throw Error(dir.string() + " has no toy variants to report");
    std::size_t count = 0;
    out << std::left << std::setw(22) << "variant" << std::setw(10) << "top_dim" << std::setw(10) << "align"
        << std::setw(10) << "smallest" << std::setw(14) << "bulk_max" << std::setw(14) << "min_top" << std::setw(12)
        << "f_top" << "loss\n";
    for (const auto& v : summary["variants"]) {
      const std::string name = v.value("name", std::string());
      out << std::left << std::setw(22) << name << std::setw(10) << v.value("top_dimension", 0) << std::setw(10)
          << v.value("alignment_index", 0) << std::setw(10) << v.value("smallest_top_index", 0) << std::setw(14)
          << fmt(v["bulk_max_eigenvalue"]) << std::setw(14) << fmt(v["min_top_eigenvalue"]) << std::setw(12)
          << fmt(v["final_f_top"]) << fmt(v["final_loss"]) << '\n';
      std::ostringstream sink;
      count += report_metrics(dir / "toy" / name, series / name, sink);
    }
    return count;
  }

  std::size_t count = report_metrics(dir, series, out);
  if (!summary.is_null()) {
    out << "final loss: " << fmt(summary["final_loss"]) << '\n';
    if (summary.contains("final_accuracy") && !summary["final_accuracy"].is_null())
      out << "final accuracy: " << fmt(summary["final_accuracy"]) << '\n';
    if (summary.value("diverged", false)) out << "diverged: " << summary.value("divergence_reason", std::string()) << '\n';
    if (summary.contains("outliers"))
      out << "outlier eigenvalues: " << summary["outliers"].get<int>() << " above " << fmt(summary["outlier_threshold"])
          << '\n';
    if (summary.contains("monotone_decrease"))
      out << "monotone loss decrease: " << (summary["monotone_decrease"].get<bool>() ? "yes" : "no") << '\n';
  }
  count += report_freeze(dir, series, out);
  for (const char* name : {"spectrum_top", "spectrum_full", "newton_loss"}) {
    const fs::path p = dir / (std::string(name) + ".csv");
    if (fs::exists(p)) write_series(series / (std::string(name) + ".dat"), artifact::read_csv(p), {0, 1}, count);
  }
  if (fs::exists(dir / "histogram.csv"))
    write_series(series / "histogram.dat", artifact::read_csv(dir / "histogram.csv"), {0, 1, 2}, count);
  return count;
}

std::string error_json(const std::exception& e) {
  json j;
  j["message"] = e.what();
  if (const auto* c = dynamic_cast<const ConfigError*>(&e)) {
    j["error"] = "config";
    j["field"] = c->field;
    j["line"] = c->line;
  } else if (dynamic_cast<const DatasetMissing*>(&e)) {
    j["error"] = "dataset_missing";
  } else if (const auto* d = dynamic_cast<const RunDiverged*>(&e)) {
    j["error"] = "diverged";
    j["steps_completed"] = d->steps_completed;
  } else if (dynamic_cast<const artifact::ArtifactExists*>(&e)) {
    j["error"] = "artifact_exists";
  } else if (dynamic_cast<const data::IdxError*>(&e)) {
    j["error"] = "dataset";
  } else {
    j["error"] = "runtime";
  }
  return j.dump();
}

}  // namespace sscope::experiment
