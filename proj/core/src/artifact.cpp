#include "sscope/artifact.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace sscope::artifact {

namespace fs = std::filesystem;

ArtifactExists::ArtifactExists(const fs::path& dir)
    : Error("output directory " + dir.string() + " already exists and is not empty; pass --force to overwrite") {}

void prepare_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw Error(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) throw ArtifactExists(dir);
      for (const auto& entry : fs::directory_iterator(dir)) fs::remove_all(entry.path());
    }
  }
  fs::create_directories(dir);
}

fs::path basis_path(const fs::path& dir, std::int64_t step) {
  return dir / "bases" / ("step_" + std::to_string(step) + ".bin");
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_freeze_csv(const fs::path& rows_path, const fs::path& avg_path, const train::FreezeReport& report) {
  auto header = [&](std::ostream& out, const char* second) {
    out << "t1," << second;
    for (int d : report.dims) out << ",top_d" << d;
    out << ",next_" << report.block_dim << '\n';
  };
  std::ofstream rows(rows_path, std::ios::trunc);
  header(rows, "t2");
  for (const auto& r : report.rows) {
    rows << r.t1 << ',' << r.t2;
    for (double v : r.top) rows << ',' << format_metric(v);
    rows << ',' << format_metric(r.next) << '\n';
  }
  std::ofstream avg(avg_path, std::ios::trunc);
  header(avg, "intervals");
  for (const auto& a : report.averaged) {
    avg << a.t1 << ',' << a.intervals;
    for (double v : a.top) avg << ',' << format_metric(v);
    avg << ',' << format_metric(a.next) << '\n';
  }
  if (!rows || !avg) throw Error("cannot write freeze tables");
}

int Table::find(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == name) return static_cast<int>(i);
  return -1;
}

Table read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
  };
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw Error(path.string() + " is empty");
  t.columns = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    std::vector<double> row(t.columns.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < cells.size() && i < row.size(); ++i) {
      const std::string& c = cells[i];
      double v = 0.0;
      const auto res = std::from_chars(c.data(), c.data() + c.size(), v);
      if (res.ec == std::errc() && res.ptr == c.data() + c.size()) row[i] = v;
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace sscope::artifact
