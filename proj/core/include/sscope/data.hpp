#pragma once

#include "sscope/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace sscope::data {

/// Samples plus a description of where they came from. Classification
/// datasets have num_classes >= 2; regression datasets have num_classes == 0.
struct Dataset {
  nn::Batch samples;
  int num_classes = 0;
  std::string provenance;  // canonical JSON
  std::uint64_t digest = 0;

  Eigen::Index size() const { return samples.size(); }
  Eigen::Index input_dim() const { return samples.inputs.cols(); }
  bool is_classification() const { return num_classes > 0; }
};

/// FNV-1a over inputs, labels and targets.
std::uint64_t content_digest(const nn::Batch& samples);
std::string digest_hex(std::uint64_t digest);

class IdxError : public Error {
 public:
  using Error::Error;
};

class IdxMagicError : public IdxError {
 public:
  IdxMagicError(const std::string& file, std::uint32_t expected, std::uint32_t actual);
  std::uint32_t expected;
  std::uint32_t actual;
};

class IdxTruncatedError : public IdxError {
 public:
  IdxTruncatedError(const std::string& file, std::uintmax_t expected_bytes, std::uintmax_t actual_bytes);
  std::uintmax_t expected_bytes;
  std::uintmax_t actual_bytes;
};

class IdxCountMismatch : public IdxError {
 public:
  IdxCountMismatch(std::uint32_t images, std::uint32_t labels);
  std::uint32_t images;
  std::uint32_t labels;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Reads an IDX image file (magic 0x803, dims n x rows x cols) and label file
/// (magic 0x801, dim n). Pixels are scaled to [0, 1]. `limit` > 0 keeps only
/// the first `limit` samples.
Dataset load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                       Eigen::Index limit = 0);

/// Writes a classification dataset as IDX files; pixels are stored as
/// round(255 x) and image dims as rows x cols (rows * cols == input_dim).
void write_mnist_idx(const Dataset& dataset, const std::filesystem::path& images_path,
                     const std::filesystem::path& labels_path, std::uint32_t rows, std::uint32_t cols);

/// x ~ U[0, 2 pi), y = sin x + N(0, noise_sd^2).
Dataset sine_regression(Eigen::Index n, double noise_sd, std::uint64_t seed);

/// Replaces every label with a seeded uniform random class.
Dataset permute_labels(const Dataset& dataset, std::uint64_t seed);

/// label -> label mod 2, two classes.
Dataset relabel_parity(const Dataset& dataset);

/// First n samples.
Dataset head(const Dataset& dataset, Eigen::Index n);

}  // namespace sscope::data
