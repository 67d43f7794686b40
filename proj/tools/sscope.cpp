// sscope run <config> [--force] [--seed-override N] [--threads N]
// sscope report <dir>
//
// Exit codes: 0 success, 1 runtime failure, 2 config error. Failures print a
// JSON error object on stderr.

#include "sscope/experiment.hpp"
#include "sscope/parallel.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

int fail(const std::exception& e, int code) {
  std::cerr << sscope::experiment::error_json(e) << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hessian top-subspace diagnostics"};
  app.require_subcommand(1);

  std::string config_path;
  bool force = false;
  std::optional<std::uint64_t> seed_override;
  unsigned threads = 0;
  auto* run = app.add_subcommand("run", "Run an experiment config");
  run->add_option("config", config_path, "Experiment config (JSON)")->required();
  run->add_flag("--force", force, "Overwrite an existing artifact directory");
  run->add_option("--seed-override", seed_override, "Replace train.seed");
  run->add_option("--threads", threads, "Worker threads (wall time only)")->check(CLI::PositiveNumber);

  std::string report_dir;
  auto* report = app.add_subcommand("report", "Summarize an artifact directory");
  report->add_option("dir", report_dir, "Artifact directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  using namespace sscope::experiment;
  try {
    if (*run) {
      if (threads > 0) sscope::set_worker_threads(threads);
      const ExperimentConfig cfg = load_config(config_path);
      RunOptions opts;
      opts.force = force;
      opts.seed_override = seed_override;
      sscope::experiment::run(cfg, opts);
      std::cout << "wrote " << cfg.output_dir.string() << '\n';
      return 0;
    }
    const std::size_t files = sscope::experiment::report(report_dir, std::cout);
    std::cout << "series files: " << files << " in " << (std::filesystem::path(report_dir) / "series").string() << '\n';
    return 0;
  } catch (const ConfigError& e) {
    return fail(e, 2);
  } catch (const std::exception& e) {
    return fail(e, 1);
  }
}
