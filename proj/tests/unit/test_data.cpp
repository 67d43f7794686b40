#include "sscope/data.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

namespace sscope::data {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("sscope_data_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                         "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

Dataset synthetic_images(Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Dataset d;
  d.num_classes = 10;
  d.provenance = R"({"source":"synthetic"})";
  d.samples.inputs.resize(n, 12);
  for (Eigen::Index i = 0; i < d.samples.inputs.size(); ++i)
    d.samples.inputs.data()[i] = static_cast<double>(rng() % 256) / 255.0;
  for (Eigen::Index i = 0; i < n; ++i) d.samples.labels.push_back(static_cast<std::int32_t>(rng() % 10));
  return d;
}

void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TEST(Idx, RoundTripIsIdentity) {
  TempDir dir;
  const Dataset d = synthetic_images(37, 1);
  write_mnist_idx(d, dir / "img", dir / "lab", 3, 4);
  const Dataset r = load_mnist_idx(dir / "img", dir / "lab");
  EXPECT_EQ(r.size(), 37);
  EXPECT_EQ(r.input_dim(), 12);
  EXPECT_EQ(r.num_classes, 10);
  EXPECT_TRUE(r.samples.inputs == d.samples.inputs);
  EXPECT_EQ(r.samples.labels, d.samples.labels);
  EXPECT_EQ(r.digest, content_digest(d.samples));
  EXPECT_FALSE(r.provenance.empty());

  const Dataset first = load_mnist_idx(dir / "img", dir / "lab", 5);
  EXPECT_EQ(first.size(), 5);
  EXPECT_TRUE(first.samples.inputs == d.samples.inputs.topRows(5));
}

TEST(Idx, HeaderIsBigEndian) {
  TempDir dir;
  write_mnist_idx(synthetic_images(2, 2), dir / "img", dir / "lab", 3, 4);
  const auto img = read_bytes(dir / "img");
  const auto lab = read_bytes(dir / "lab");
  ASSERT_EQ(img.size(), 16u + 2 * 12);
  ASSERT_EQ(lab.size(), 8u + 2);
  EXPECT_EQ(std::vector<unsigned char>(img.begin(), img.begin() + 16),
            (std::vector<unsigned char>{0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 4}));
  EXPECT_EQ(std::vector<unsigned char>(lab.begin(), lab.begin() + 8),
            (std::vector<unsigned char>{0, 0, 8, 1, 0, 0, 0, 2}));
}

TEST(Idx, PixelsScaledBy255) {
  TempDir dir;
  write_bytes(dir / "img", {0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 3, 0, 51, 255});
  write_bytes(dir / "lab", {0, 0, 8, 1, 0, 0, 0, 1, 7});
  const Dataset d = load_mnist_idx(dir / "img", dir / "lab");
  EXPECT_EQ(d.samples.inputs(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(d.samples.inputs(0, 1), 0.2);
  EXPECT_EQ(d.samples.inputs(0, 2), 1.0);
  EXPECT_EQ(d.samples.labels[0], 7);
}

TEST(Idx, WrongMagicIsReported) {
  TempDir dir;
  write_mnist_idx(synthetic_images(3, 3), dir / "img", dir / "lab", 3, 4);
  // Swapped files: each has the other's magic.
  try {
    load_mnist_idx(dir / "lab", dir / "img");
    FAIL() << "expected IdxMagicError";
  } catch (const IdxMagicError& e) {
    EXPECT_EQ(e.expected, kIdxImagesMagic);
    EXPECT_EQ(e.actual, kIdxLabelsMagic);
  }
}

TEST(Idx, TruncationNamesExpectedAndActualBytes) {
  TempDir dir;
  write_mnist_idx(synthetic_images(4, 4), dir / "img", dir / "lab", 3, 4);
  fs::resize_file(dir / "img", 16 + 4 * 12 - 5);
  try {
    load_mnist_idx(dir / "img", dir / "lab");
    FAIL() << "expected IdxTruncatedError";
  } catch (const IdxTruncatedError& e) {
    EXPECT_EQ(e.expected_bytes, 16u + 48u);
    EXPECT_EQ(e.actual_bytes, 16u + 43u);
    EXPECT_NE(std::string(e.what()).find("64"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("59"), std::string::npos);
  }
  fs::resize_file(dir / "lab", 6);
  EXPECT_THROW(load_mnist_idx(dir / "img", dir / "lab"), IdxTruncatedError);
}

TEST(Idx, CountMismatch) {
  TempDir dir;
  write_mnist_idx(synthetic_images(5, 5), dir / "img", dir / "lab", 3, 4);
  write_mnist_idx(synthetic_images(6, 6), dir / "img6", dir / "lab6", 3, 4);
  try {
    load_mnist_idx(dir / "img", dir / "lab6");
    FAIL() << "expected IdxCountMismatch";
  } catch (const IdxCountMismatch& e) {
    EXPECT_EQ(e.images, 5u);
    EXPECT_EQ(e.labels, 6u);
  }
}

TEST(Idx, MissingFile) {
  TempDir dir;
  EXPECT_THROW(load_mnist_idx(dir / "nope", dir / "nope2"), IdxError);
}

TEST(Idx, StandardTrainFiles) {
  const char* root = std::getenv("SUBSPACE_SCOPE_DATA_DIR");
  if (root == nullptr || !fs::exists(fs::path(root) / "train-images-idx3-ubyte"))
    GTEST_SKIP() << "MNIST not available; set SUBSPACE_SCOPE_DATA_DIR";
  const Dataset d = load_mnist_idx(fs::path(root) / "train-images-idx3-ubyte", fs::path(root) / "train-labels-idx1-ubyte");
  EXPECT_EQ(d.size(), 60000);
  EXPECT_EQ(d.input_dim(), 784);
  EXPECT_EQ(d.num_classes, 10);
  EXPECT_GE(d.samples.inputs.minCoeff(), 0.0);
  EXPECT_LE(d.samples.inputs.maxCoeff(), 1.0);
}

TEST(Sine, NoiselessIsExact) {
  const Dataset d = sine_regression(200, 0.0, 1);
  EXPECT_EQ(d.num_classes, 0);
  EXPECT_FALSE(d.is_classification());
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    const double x = d.samples.inputs(i, 0);
    EXPECT_GE(x, 0.0);
    EXPECT_LT(x, 2 * std::numbers::pi);
    EXPECT_EQ(d.samples.targets(i, 0), std::sin(x));
  }
}

TEST(Sine, NoiseStandardDeviation) {
  const Dataset d = sine_regression(10000, 0.1, 2);
  const Vector r = d.samples.targets.col(0) - d.samples.inputs.col(0).array().sin().matrix();
  const double mean = r.mean();
  const double sd = std::sqrt((r.array() - mean).square().sum() / static_cast<double>(r.size() - 1));
  EXPECT_NEAR(sd, 0.1, 0.005);
}

TEST(Sine, DeterministicPerSeed) {
  const Dataset a = sine_regression(50, 0.1, 3);
  const Dataset b = sine_regression(50, 0.1, 3);
  EXPECT_TRUE(a.samples.inputs == b.samples.inputs);
  EXPECT_TRUE(a.samples.targets == b.samples.targets);
  EXPECT_EQ(a.digest, b.digest);
  EXPECT_NE(a.digest, sine_regression(50, 0.1, 4).digest);
  EXPECT_THROW(sine_regression(0, 0.1, 0), InvalidArgument);
  EXPECT_THROW(sine_regression(5, -1.0, 0), InvalidArgument);
}

TEST(PermuteLabels, ReproducibleAndUniform) {
  const Dataset d = synthetic_images(20000, 7);
  const Dataset a = permute_labels(d, 11);
  const Dataset b = permute_labels(d, 11);
  EXPECT_EQ(a.samples.labels, b.samples.labels);
  EXPECT_NE(a.samples.labels, permute_labels(d, 12).samples.labels);
  EXPECT_TRUE(a.samples.inputs == d.samples.inputs);
  EXPECT_EQ(a.num_classes, 10);
  std::vector<int> counts(10, 0);
  for (auto l : a.samples.labels) ++counts[static_cast<std::size_t>(l)];
  for (int c : counts) EXPECT_NEAR(c, 2000, 4 * std::sqrt(2000 * 0.9));
  EXPECT_NE(a.provenance, d.provenance);
  EXPECT_NE(a.digest, d.digest);
}

TEST(PermuteLabels, DestroysLabelInputDependence) {
  // Inputs that encode their label exactly.
  Dataset d = synthetic_images(5000, 8);
  for (Eigen::Index i = 0; i < d.size(); ++i) d.samples.inputs(i, 0) = d.samples.labels[static_cast<std::size_t>(i)] / 9.0;
  const Dataset p = permute_labels(d, 9);
  // Per-class mean of pixel 0 should match the overall mean within 3 standard errors.
  const Vector col = p.samples.inputs.col(0);
  const double overall = col.mean();
  const double sd = std::sqrt((col.array() - overall).square().mean());
  for (int c = 0; c < 10; ++c) {
    double sum = 0.0;
    int n = 0;
    for (Eigen::Index i = 0; i < p.size(); ++i)
      if (p.samples.labels[static_cast<std::size_t>(i)] == c) {
        sum += col[i];
        ++n;
      }
    EXPECT_LE(std::abs(sum / n - overall), 3 * sd / std::sqrt(n)) << "class " << c;
  }
}

TEST(Parity, MapsDigitsModTwo) {
  Dataset d = synthetic_images(10, 9);
  d.samples.labels = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  const Dataset p = relabel_parity(d);
  EXPECT_EQ(p.num_classes, 2);
  EXPECT_EQ(p.samples.labels[7], 1);
  EXPECT_EQ(p.samples.labels[0], 0);
  EXPECT_EQ(p.samples.labels, (std::vector<std::int32_t>{0, 1, 0, 1, 0, 1, 0, 1, 0, 1}));
  EXPECT_THROW(relabel_parity(sine_regression(3, 0.1, 0)), InvalidArgument);
  EXPECT_THROW(permute_labels(sine_regression(3, 0.1, 0), 1), InvalidArgument);
}

TEST(Head, KeepsFirstRows) {
  const Dataset d = synthetic_images(10, 10);
  const Dataset h = head(d, 4);
  EXPECT_EQ(h.size(), 4);
  EXPECT_EQ(std::vector<std::int32_t>(d.samples.labels.begin(), d.samples.labels.begin() + 4), h.samples.labels);
  EXPECT_THROW(head(d, 0), InvalidArgument);
}

TEST(Digest, ChangesIffContentChanges) {
  Dataset d = synthetic_images(10, 11);
  const auto base = content_digest(d.samples);
  EXPECT_EQ(base, content_digest(synthetic_images(10, 11).samples));
  d.samples.inputs(3, 3) += 1e-12;
  EXPECT_NE(content_digest(d.samples), base);
  Dataset e = synthetic_images(10, 11);
  e.samples.labels[0] = (e.samples.labels[0] + 1) % 10;
  EXPECT_NE(content_digest(e.samples), base);
  EXPECT_EQ(digest_hex(0x1234).size(), 16u);
}

}  // namespace
}  // namespace sscope::data
