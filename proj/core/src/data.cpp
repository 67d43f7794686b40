#include "sscope/data.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <vector>

namespace sscope::data {

namespace {

using nlohmann::json;

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

std::uint32_t read_be32(const unsigned char* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

struct IdxFile {
  std::vector<std::uint32_t> dims;
  std::vector<unsigned char> payload;
};

IdxFile read_idx(const std::filesystem::path& path, std::uint32_t magic, std::size_t num_dims, std::uint32_t keep) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError("cannot open IDX file " + path.string());
  const std::uintmax_t size = std::filesystem::file_size(path);
  const std::size_t header = 4 + 4 * num_dims;
  if (size < 4) throw IdxTruncatedError(path.string(), header, size);
  std::vector<unsigned char> head(header);
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(std::min<std::uintmax_t>(size, header)));
  const std::uint32_t actual = read_be32(head.data());
  if (actual != magic) throw IdxMagicError(path.string(), magic, actual);
  if (size < header) throw IdxTruncatedError(path.string(), header, size);

  IdxFile f;
  std::uintmax_t items = 1;
  for (std::size_t d = 0; d < num_dims; ++d) {
    f.dims.push_back(read_be32(head.data() + 4 + 4 * d));
    items *= f.dims.back();
  }
  const std::uintmax_t expected = header + items;
  if (size < expected) throw IdxTruncatedError(path.string(), expected, size);

  const std::uint32_t n = f.dims[0];
  const std::uint32_t count = keep > 0 ? std::min(keep, n) : n;
  const std::uintmax_t per_item = n > 0 ? items / n : 0;
  f.payload.resize(static_cast<std::size_t>(per_item * count));
  in.read(reinterpret_cast<char*>(f.payload.data()), static_cast<std::streamsize>(f.payload.size()));
  if (!in) throw IdxTruncatedError(path.string(), expected, size);
  return f;
}

json parse(const std::string& provenance) { return json::parse(provenance); }

Dataset finish(nn::Batch samples, int num_classes, json provenance) {
  Dataset ds;
  ds.samples = std::move(samples);
  ds.num_classes = num_classes;
  ds.digest = content_digest(ds.samples);
  provenance["digest"] = digest_hex(ds.digest);
  ds.provenance = provenance.dump();
  return ds;
}

}  // namespace

IdxMagicError::IdxMagicError(const std::string& file, std::uint32_t e, std::uint32_t a)
    : IdxError(file + ": bad IDX magic " + hex32(a) + ", expected " + hex32(e)), expected(e), actual(a) {}

IdxTruncatedError::IdxTruncatedError(const std::string& file, std::uintmax_t e, std::uintmax_t a)
    : IdxError(file + ": truncated IDX file, expected " + std::to_string(e) + " bytes, found " + std::to_string(a)),
      expected_bytes(e),
      actual_bytes(a) {}

IdxCountMismatch::IdxCountMismatch(std::uint32_t i, std::uint32_t l)
    : IdxError("IDX count mismatch: " + std::to_string(i) + " images vs " + std::to_string(l) + " labels"),
      images(i),
      labels(l) {}

std::uint64_t content_digest(const nn::Batch& samples) {
  std::uint64_t h = 14695981039346656037ull;
  auto mix = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  const std::int64_t shape[3] = {samples.inputs.rows(), samples.inputs.cols(), samples.targets.cols()};
  mix(shape, sizeof shape);
  mix(samples.inputs.data(), static_cast<std::size_t>(samples.inputs.size()) * sizeof(double));
  mix(samples.labels.data(), samples.labels.size() * sizeof(std::int32_t));
  mix(samples.targets.data(), static_cast<std::size_t>(samples.targets.size()) * sizeof(double));
  return h;
}

std::string digest_hex(std::uint64_t digest) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(digest));
  return buf;
}

Dataset load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                       Eigen::Index limit) {
  const auto keep = static_cast<std::uint32_t>(std::max<Eigen::Index>(limit, 0));
  const IdxFile images = read_idx(images_path, kIdxImagesMagic, 3, keep);
  const IdxFile labels = read_idx(labels_path, kIdxLabelsMagic, 1, keep);
  if (images.dims[0] != labels.dims[0]) throw IdxCountMismatch(images.dims[0], labels.dims[0]);

  const std::uint32_t n = keep > 0 ? std::min(keep, images.dims[0]) : images.dims[0];
  if (n == 0) throw IdxError("IDX files contain no samples");
  const Eigen::Index d = static_cast<Eigen::Index>(images.dims[1]) * images.dims[2];
  nn::Batch samples;
  samples.inputs.resize(n, d);
  samples.labels.resize(n);
  int max_label = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    const unsigned char* px = images.payload.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(d);
    for (Eigen::Index j = 0; j < d; ++j) samples.inputs(i, j) = px[j] / 255.0;
    samples.labels[i] = labels.payload[i];
    max_label = std::max(max_label, static_cast<int>(labels.payload[i]));
  }
  json prov = {{"source", "idx"},
               {"images", images_path.filename().string()},
               {"labels", labels_path.filename().string()},
               {"count", n},
               {"total", images.dims[0]}};
  return finish(std::move(samples), std::max(max_label + 1, 2), std::move(prov));
}

void write_mnist_idx(const Dataset& dataset, const std::filesystem::path& images_path,
                     const std::filesystem::path& labels_path, std::uint32_t rows, std::uint32_t cols) {
  const auto& s = dataset.samples;
  if (static_cast<Eigen::Index>(rows) * cols != s.inputs.cols())
    throw InvalidArgument("write_mnist_idx: rows * cols must equal the input dimension");
  if (static_cast<Eigen::Index>(s.labels.size()) != s.size())
    throw InvalidArgument("write_mnist_idx: dataset has no labels");
  const auto n = static_cast<std::uint32_t>(s.size());

  std::ofstream img(images_path, std::ios::binary | std::ios::trunc);
  std::ofstream lab(labels_path, std::ios::binary | std::ios::trunc);
  if (!img || !lab) throw Error("write_mnist_idx: cannot open output files");
  write_be32(img, kIdxImagesMagic);
  write_be32(img, n);
  write_be32(img, rows);
  write_be32(img, cols);
  std::vector<unsigned char> row(static_cast<std::size_t>(s.inputs.cols()));
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    for (Eigen::Index j = 0; j < s.inputs.cols(); ++j) {
      const double v = std::clamp(s.inputs(i, j), 0.0, 1.0);
      row[static_cast<std::size_t>(j)] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    img.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  write_be32(lab, kIdxLabelsMagic);
  write_be32(lab, n);
  for (auto y : s.labels) {
    const auto b = static_cast<unsigned char>(y);
    lab.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!img || !lab) throw Error("write_mnist_idx: write failed");
}

Dataset sine_regression(Eigen::Index n, double noise_sd, std::uint64_t seed) {
  if (n < 1) throw InvalidArgument("sine_regression: n must be positive");
  if (noise_sd < 0) throw InvalidArgument("sine_regression: noise_sd must be nonnegative");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> normal(0.0, 1.0);
  nn::Batch samples;
  samples.inputs.resize(n, 1);
  samples.targets.resize(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = uniform(rng);
    samples.inputs(i, 0) = x;
    samples.targets(i, 0) = std::sin(x) + noise_sd * normal(rng);
  }
  json prov = {{"source", "sine"}, {"n", n}, {"noise_sd", noise_sd}, {"seed", seed}};
  return finish(std::move(samples), 0, std::move(prov));
}

Dataset permute_labels(const Dataset& dataset, std::uint64_t seed) {
  if (!dataset.is_classification()) throw InvalidArgument("permute_labels: dataset has no class labels");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int32_t> cls(0, dataset.num_classes - 1);
  nn::Batch samples = dataset.samples;
  for (auto& y : samples.labels) y = cls(rng);
  json prov = {{"source", "random_labels"}, {"seed", seed}, {"parent", parse(dataset.provenance)}};
  return finish(std::move(samples), dataset.num_classes, std::move(prov));
}

Dataset relabel_parity(const Dataset& dataset) {
  if (!dataset.is_classification()) throw InvalidArgument("relabel_parity: dataset has no class labels");
  nn::Batch samples = dataset.samples;
  for (auto& y : samples.labels) y = y % 2;
  json prov = {{"source", "parity"}, {"parent", parse(dataset.provenance)}};
  return finish(std::move(samples), 2, std::move(prov));
}

Dataset head(const Dataset& dataset, Eigen::Index n) {
  if (n < 1) throw InvalidArgument("head: n must be positive");
  n = std::min(n, dataset.size());
  nn::Batch samples;
  samples.inputs = dataset.samples.inputs.topRows(n);
  if (!dataset.samples.labels.empty())
    samples.labels.assign(dataset.samples.labels.begin(), dataset.samples.labels.begin() + n);
  if (dataset.samples.targets.size() > 0) samples.targets = dataset.samples.targets.topRows(n);
  json prov = {{"source", "head"}, {"n", n}, {"parent", parse(dataset.provenance)}};
  return finish(std::move(samples), dataset.num_classes, std::move(prov));
}

}  // namespace sscope::data
