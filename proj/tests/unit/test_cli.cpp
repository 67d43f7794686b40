#include "sscope/artifact.hpp"
#include "sscope/experiment.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;
using namespace sscope;
using namespace sscope::experiment;
using nlohmann::json;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("sscope_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  static inline int counter_ = 0;
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

ConfigError expect_config_error(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e;
  }
  ADD_FAILURE() << "no ConfigError for: " << text;
  return ConfigError("", 0, "none");
}

std::string sine_config(const fs::path& out, const std::string& experiment, const std::string& extra = "") {
  json j = {{"experiment", experiment},
            {"output_dir", out.string()},
            {"data", {{"source", "sine"}, {"n", 40}, {"seed", 3}}},
            {"model", {{"hidden", {6}}, {"activation", "softplus"}}},
            {"train",
             {{"eta", 0.05},
              {"total_steps", 40},
              {"measure_every", 10},
              {"eigen_every", 20},
              {"track_dims", {2, 3}},
              {"primary_dim", 2},
              {"seed", 5}}}};
  if (!extra.empty()) j.merge_patch(json::parse(extra));
  return j.dump(2);
}

#ifdef SSCOPE_CLI_PATH
struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult run_cli(const std::string& args, const fs::path& scratch) {
  const fs::path out = scratch / "stdout.txt";
  const fs::path err = scratch / "stderr.txt";
  const std::string cmd = std::string(SSCOPE_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}
#endif

}  // namespace

TEST(Config, MinimalDefaults) {
  const ExperimentConfig c = parse_config(R"({"experiment": "gtop", "output_dir": "runs/a"})");
  EXPECT_EQ(c.experiment, ExperimentKind::gtop);
  EXPECT_EQ(c.output_dir, fs::path("runs/a"));
  EXPECT_EQ(c.data.source, "mnist");
  EXPECT_EQ(c.data.limit, 10000);
  EXPECT_EQ(c.spectrum.top, 12);
}

TEST(Config, RequiredKeys) {
  EXPECT_EQ(expect_config_error(R"({"output_dir": "x"})").field, "experiment");
  EXPECT_EQ(expect_config_error(R"({"experiment": "gtop"})").field, "output_dir");
}

TEST(Config, UnknownKeyNamesFieldAndLine) {
  const ConfigError e = expect_config_error("{\n  \"experiment\": \"gtop\",\n  \"output_dir\": \"x\",\n"
                                            "  \"train\": {\n    \"etaa\": 0.1\n  }\n}");
  EXPECT_EQ(e.field, "train.etaa");
  EXPECT_EQ(e.line, 5);
}

TEST(Config, BadEnumNamesField) {
  const ConfigError e = expect_config_error("{\"experiment\": \"gtop\", \"output_dir\": \"x\",\n"
                                            " \"train\": {\"optimizer\": \"rmsprop\"}}");
  EXPECT_EQ(e.field, "train.optimizer");
  EXPECT_EQ(e.line, 2);
  EXPECT_EQ(expect_config_error(R"({"experiment": "gtopp", "output_dir": "x"})").field, "experiment");
  EXPECT_EQ(expect_config_error(R"({"experiment": "gtop", "output_dir": "x", "model": {"activation": "tanh"}})").field,
            "model.activation");
}

TEST(Config, WrongType) {
  EXPECT_EQ(expect_config_error(R"({"experiment": "gtop", "output_dir": "x", "train": {"eta": "fast"}})").field,
            "train.eta");
}

TEST(Config, InvalidJsonReportsLine) {
  const ConfigError e = expect_config_error("{\n\"experiment\": \"gtop\",\n\"output_dir\": \"x\"\n,,}");
  EXPECT_EQ(e.line, 4);
}

TEST(Config, ValidationErrorsMapToTrainFields) {
  const ConfigError e =
      expect_config_error(R"({"experiment": "gtop", "output_dir": "x", "train": {"eta": -1.0}})");
  EXPECT_EQ(e.field.rfind("train", 0), 0u);
}

TEST(Config, DataChoices) {
  EXPECT_EQ(expect_config_error(R"({"experiment": "gtop", "output_dir": "x", "data": {"source": "cifar"}})").field,
            "data.source");
  EXPECT_EQ(expect_config_error(R"({"experiment": "gtop", "output_dir": "x", "data": {"labels": "shuffled"}})").field,
            "data.labels");
  // Keys from another source are unknown.
  EXPECT_EQ(
      expect_config_error(R"({"experiment": "gtop", "output_dir": "x", "data": {"source": "sine", "limit": 5}})").field,
      "data.limit");
}

TEST(Config, ToyRejectsTrainingSections) {
  EXPECT_EQ(expect_config_error(R"({"experiment": "toy", "output_dir": "x", "train": {"eta": 0.1}})").field, "train");
  EXPECT_EQ(expect_config_error(R"({"experiment": "toy", "output_dir": "x", "toy": {"default_grid": false}})").field,
            "toy.variants");
  EXPECT_EQ(expect_config_error(R"({"experiment": "toy", "output_dir": "x", "toy": {"variants": [{"eta": 0.1}]}})")
                .field,
            "toy.variants[0].name");
}

TEST(Config, FreezeNeedsSnapshots) {
  EXPECT_EQ(expect_config_error(R"({"experiment": "freeze", "output_dir": "x"})").field, "train.basis_snapshot_steps");
}

TEST(Config, ToyVariantsInheritSectionDefaults) {
  const ExperimentConfig c = parse_config(R"({"experiment": "toy", "output_dir": "x",
    "toy": {"eta": 0.2, "steps": 300, "variants": [{"name": "a", "num_classes": 3, "ambient_dim": 50},
                                                   {"name": "b", "steps": 100}]}})");
  EXPECT_FALSE(c.toy.default_grid);
  ASSERT_EQ(c.toy.variants.size(), 2u);
  EXPECT_EQ(c.toy.variants[0].mixture.num_classes, 3);
  EXPECT_EQ(c.toy.variants[0].mixture.ambient_dim, 50);
  EXPECT_DOUBLE_EQ(c.toy.variants[0].eta, 0.2);
  EXPECT_EQ(c.toy.variants[0].steps, 300);
  EXPECT_EQ(c.toy.variants[1].steps, 100);
}

TEST(Config, ToJsonRoundTrip) {
  const ExperimentConfig a = parse_config(sine_config("runs/r", "spectrum", R"({"spectrum": {"dense": true, "bins": 7}})"));
  const std::string text = to_json(a);
  const ExperimentConfig b = parse_config(text);
  EXPECT_EQ(to_json(b), text);
  EXPECT_EQ(b.experiment, ExperimentKind::spectrum);
  EXPECT_TRUE(b.spectrum.dense);
  EXPECT_EQ(b.spectrum.bins, 7u);
  EXPECT_EQ(b.data.source, "sine");
  EXPECT_EQ(b.train.total_steps, 40);
}

#ifdef SSCOPE_CONFIG_DIR
TEST(Config, ShippedConfigsParse) {
  int count = 0;
  for (const auto& e : fs::directory_iterator(SSCOPE_CONFIG_DIR)) {
    if (e.path().extension() != ".json") continue;
    EXPECT_NO_THROW(load_config(e.path())) << e.path();
    ++count;
  }
  EXPECT_GT(count, 0);
}
#endif

TEST(ErrorJson, Kinds) {
  const json c = json::parse(error_json(ConfigError("train.eta", 3, "bad")));
  EXPECT_EQ(c["error"], "config");
  EXPECT_EQ(c["field"], "train.eta");
  EXPECT_EQ(c["line"], 3);
  EXPECT_EQ(json::parse(error_json(DatasetMissing("gone")))["error"], "dataset_missing");
  const json d = json::parse(error_json(RunDiverged("nan loss", 17)));
  EXPECT_EQ(d["error"], "diverged");
  EXPECT_EQ(d["steps_completed"], 17);
  EXPECT_EQ(json::parse(error_json(std::runtime_error("x")))["error"], "runtime");
}

TEST(Dataset, MissingMnistDirectory) {
  TempDir tmp;
  DataConfig d;
  d.dir = (tmp.path() / "absent").string();
  EXPECT_THROW(load_dataset(d), DatasetMissing);
}

TEST(Dataset, ResolveModelDefaultsLoss) {
  DataConfig d;
  d.source = "sine";
  d.n = 10;
  const data::Dataset ds = load_dataset(d);
  ModelConfig m;
  m.hidden = {4};
  const nn::ModelSpec s = resolve_model(m, ds);
  EXPECT_EQ(s.loss_kind, nn::LossKind::mean_squared_error);
  EXPECT_EQ(s.num_outputs, 1);
  m.loss = nn::LossKind::cross_entropy;
  EXPECT_THROW(resolve_model(m, ds), ConfigError);
}

TEST(Run, GtopArtifacts) {
  TempDir tmp;
  const fs::path out = tmp.path() / "gtop";
  run(parse_config(sine_config(out, "gtop")), {});
  for (const char* f : {"config.json", "metrics.csv", "summary.json"}) EXPECT_TRUE(fs::exists(out / f)) << f;
  const json s = json::parse(slurp(out / "summary.json"));
  EXPECT_EQ(s["experiment"], "gtop");
  EXPECT_EQ(s["steps_completed"], 40);
  EXPECT_FALSE(s["diverged"].get<bool>());
  EXPECT_EQ(s["num_records"], 5);
  EXPECT_EQ(s["dataset"]["source"], "sine");

  std::istringstream metrics(slurp(out / "metrics.csv"));
  std::string header;
  std::getline(metrics, header);
  EXPECT_EQ(header.rfind("step,loss,accuracy,f_top,hg_overlap,lambda_1", 0), 0u) << header;
  int rows = 0;
  for (std::string line; std::getline(metrics, line);) ++rows;
  EXPECT_EQ(rows, 5);

  std::ostringstream rep;
  EXPECT_GT(report(out, rep), 0u);
  EXPECT_TRUE(fs::exists(out / "series" / "loss.dat"));
  EXPECT_TRUE(fs::exists(out / "series" / "f_top.dat"));
  EXPECT_NE(rep.str().find("experiment: gtop"), std::string::npos);
}

TEST(Run, RefusesOverwriteUnlessForced) {
  TempDir tmp;
  const fs::path out = tmp.path() / "run";
  const ExperimentConfig cfg = parse_config(sine_config(out, "gtop"));
  run(cfg, {});
  EXPECT_ANY_THROW(run(cfg, {}));
  RunOptions force;
  force.force = true;
  EXPECT_NO_THROW(run(cfg, force));
}

TEST(Run, SeedOverrideChangesResult) {
  TempDir tmp;
  const ExperimentConfig a = parse_config(sine_config(tmp.path() / "a", "gtop"));
  const ExperimentConfig b = parse_config(sine_config(tmp.path() / "b", "gtop"));
  const ExperimentConfig c = parse_config(sine_config(tmp.path() / "c", "gtop"));
  run(a, {});
  run(b, {});
  RunOptions o;
  o.seed_override = 99;
  run(c, o);
  EXPECT_EQ(slurp(tmp.path() / "a" / "metrics.csv"), slurp(tmp.path() / "b" / "metrics.csv"));
  EXPECT_NE(slurp(tmp.path() / "a" / "metrics.csv"), slurp(tmp.path() / "c" / "metrics.csv"));
  EXPECT_EQ(json::parse(slurp(tmp.path() / "c" / "config.json"))["train"]["seed"], 99);
}

TEST(Run, FreezeArtifacts) {
  TempDir tmp;
  const fs::path out = tmp.path() / "freeze";
  run(parse_config(sine_config(out, "freeze",
                               R"({"train": {"basis_snapshot_steps": [10, 20, 40], "persist_snapshot_bases": true}})")),
      {});
  EXPECT_TRUE(fs::exists(out / "freeze.csv"));
  EXPECT_TRUE(fs::exists(out / "freeze_avg.csv"));
  EXPECT_TRUE(fs::exists(artifact::basis_path(out, 20)));
  std::ostringstream rep;
  report(out, rep);
  bool freeze_series = false;
  for (const auto& e : fs::directory_iterator(out / "series"))
    freeze_series = freeze_series || e.path().filename().string().rfind("freeze", 0) == 0;
  EXPECT_TRUE(freeze_series);
}

TEST(Run, SpectrumDense) {
  TempDir tmp;
  const fs::path out = tmp.path() / "spec";
  run(parse_config(sine_config(out, "spectrum", R"({"spectrum": {"dense": true, "top": 4, "bins": 5,
                                                    "reference_index": 4}})")),
      {});
  for (const char* f : {"spectrum_top.csv", "spectrum_full.csv", "histogram.csv"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  const json s = json::parse(slurp(out / "summary.json"));
  ASSERT_EQ(s["spectrum_top"].size(), 4u);
  EXPECT_TRUE(s.contains("outliers"));
  // p = 6 + 6 + 6 + 1 parameters, so 19 eigenvalues plus a header.
  std::istringstream full(slurp(out / "spectrum_full.csv"));
  int lines = 0;
  for (std::string l; std::getline(full, l);) ++lines;
  EXPECT_EQ(lines, 1 + s["parameter_count"].get<int>());
  std::ostringstream rep;
  report(out, rep);
  EXPECT_TRUE(fs::exists(out / "series" / "histogram.dat"));
  EXPECT_TRUE(fs::exists(out / "series" / "spectrum_full.dat"));
}

TEST(Run, NewtonArtifacts) {
  TempDir tmp;
  const fs::path out = tmp.path() / "newton";
  run(parse_config(sine_config(out, "newton", R"({"newton": {"warmup_steps": 50, "warmup_eta": 0.05},
     "train": {"total_steps": 5, "eigen_every": 0, "measure_every": 1, "newton_dim": 2}})")),
      {});
  const json s = json::parse(slurp(out / "summary.json"));
  EXPECT_EQ(s["warmup_steps"], 50);
  EXPECT_TRUE(s.contains("monotone_decrease"));
  std::istringstream loss(slurp(out / "newton_loss.csv"));
  int lines = 0;
  for (std::string l; std::getline(loss, l);) ++lines;
  EXPECT_EQ(lines, 1 + 6);
}

TEST(Run, ToyCustomVariants) {
  TempDir tmp;
  const fs::path out = tmp.path() / "toy";
  json j = {{"experiment", "toy"},
            {"output_dir", out.string()},
            {"toy",
             {{"steps", 200},
              {"measure_every", 100},
              {"variants",
               {{{"name", "k2"}, {"num_classes", 2}, {"ambient_dim", 20}, {"extra_eigs", 2}},
                {{"name", "k3"}, {"num_classes", 3}, {"ambient_dim", 20}, {"samples_per_class", 2}, {"sigma", 0.05}}}}}}};
  run(parse_config(j.dump()), {});
  EXPECT_TRUE(fs::exists(out / "toy" / "k2" / "metrics.csv"));
  EXPECT_TRUE(fs::exists(out / "toy" / "k3" / "metrics.csv"));
  const json s = json::parse(slurp(out / "summary.json"));
  ASSERT_EQ(s["variants"].size(), 2u);
  EXPECT_EQ(s["variants"][0]["name"], "k2");
  std::ostringstream rep;
  EXPECT_GT(report(out, rep), 0u);
  EXPECT_TRUE(fs::exists(out / "series" / "k3" / "loss.dat"));
}

TEST(Report, RefusesEmptyRun) {
  TempDir tmp;
  std::ostringstream rep;
  EXPECT_ANY_THROW(report(tmp.path() / "absent", rep));
  EXPECT_ANY_THROW(report(tmp.path(), rep));
  write_file(tmp.path() / "metrics.csv", "step,loss\n");
  EXPECT_ANY_THROW(report(tmp.path(), rep));
}

#ifdef SSCOPE_CLI_PATH
TEST(Cli, InvalidEnumExitsTwoWithFieldError) {
  TempDir tmp;
  write_file(tmp.path() / "c.json", sine_config(tmp.path() / "out", "gtop", R"({"train": {"optimizer": "lbfgs"}})"));
  const CliResult r = run_cli("run " + (tmp.path() / "c.json").string(), tmp.path());
  EXPECT_EQ(r.code, 2);
  const json e = json::parse(r.err);
  EXPECT_EQ(e["error"], "config");
  EXPECT_EQ(e["field"], "train.optimizer");
  EXPECT_FALSE(fs::exists(tmp.path() / "out"));
}

TEST(Cli, UnknownFlagExitsTwo) {
  TempDir tmp;
  EXPECT_EQ(run_cli("run x.json --bogus", tmp.path()).code, 2);
  EXPECT_EQ(run_cli("", tmp.path()).code, 2);
}

TEST(Cli, OverwriteAndForce) {
  TempDir tmp;
  const fs::path cfg = tmp.path() / "c.json";
  write_file(cfg, sine_config(tmp.path() / "out", "gtop"));
  EXPECT_EQ(run_cli("run " + cfg.string(), tmp.path()).code, 0);
  const CliResult again = run_cli("run " + cfg.string(), tmp.path());
  EXPECT_EQ(again.code, 1);
  EXPECT_EQ(json::parse(again.err)["error"], "artifact_exists");
  EXPECT_EQ(run_cli("run " + cfg.string() + " --force", tmp.path()).code, 0);
  const CliResult rep = run_cli("report " + (tmp.path() / "out").string(), tmp.path());
  EXPECT_EQ(rep.code, 0);
  EXPECT_NE(rep.out.find("series files:"), std::string::npos);
}

TEST(Cli, ThreadsDoNotChangeResults) {
  TempDir tmp;
  const fs::path a = tmp.path() / "a.json";
  const fs::path b = tmp.path() / "b.json";
  write_file(a, sine_config(tmp.path() / "ra", "gtop"));
  write_file(b, sine_config(tmp.path() / "rb", "gtop"));
  ASSERT_EQ(run_cli("run " + a.string() + " --threads 1", tmp.path()).code, 0);
  ASSERT_EQ(run_cli("run " + b.string() + " --threads 4", tmp.path()).code, 0);
  EXPECT_EQ(slurp(tmp.path() / "ra" / "metrics.csv"), slurp(tmp.path() / "rb" / "metrics.csv"));
}

TEST(Cli, MissingDatasetExitsOne) {
  TempDir tmp;
  const fs::path cfg = tmp.path() / "c.json";
  json j = {{"experiment", "gtop"},
            {"output_dir", (tmp.path() / "out").string()},
            {"data", {{"dir", (tmp.path() / "nomnist").string()}}}};
  write_file(cfg, j.dump());
  const CliResult r = run_cli("run " + cfg.string(), tmp.path());
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(json::parse(r.err)["error"], "dataset_missing");
}

TEST(Cli, ReportOnEmptyDirectoryFails) {
  TempDir tmp;
  fs::create_directories(tmp.path() / "empty");
  const CliResult r = run_cli("report " + (tmp.path() / "empty").string(), tmp.path());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("metrics.csv"), std::string::npos);
}
#endif
