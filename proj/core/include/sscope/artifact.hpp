#pragma once

// Files of a run directory:
//   config.json        resolved configuration
//   metrics.csv        one DiagnosticsRecord per row
//   summary.json       final numbers of the run
//   bases/step_<t>.bin snapshot bases (see save_basis)
//   freeze.csv         t1, t2, top_d<k>..., next_<b>
//   freeze_avg.csv     t1, intervals, top_d<k>..., next_<b>

#include "sscope/trainer.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace sscope::artifact {

class ArtifactExists : public Error {
 public:
  explicit ArtifactExists(const std::filesystem::path& dir);
};

/// Creates `dir`. An existing nonempty directory is cleared when `force` is
/// set and refused otherwise.
void prepare_output_dir(const std::filesystem::path& dir, bool force);

std::filesystem::path basis_path(const std::filesystem::path& dir, std::int64_t step);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

void write_freeze_csv(const std::filesystem::path& rows_path, const std::filesystem::path& avg_path,
                      const train::FreezeReport& report);

/// A parsed CSV file with a header row. Empty cells and `undefined` read as
/// NaN.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  /// Column index or -1.
  int find(const std::string& name) const;
};

Table read_csv(const std::filesystem::path& path);

}  // namespace sscope::artifact
