#pragma once

// Fully connected models (softmax regression and MLPs) with exact loss,
// gradient and Hessian-vector products. The Hessian is never materialized.
//
// Parameter flattening is layer-major. Within a layer the weight matrix comes
// first, stored row-major with shape (fan_out, fan_in), followed by the
// fan_out biases when use_bias is set. This order is part of the public
// contract: eigenvector coefficient dumps index into it.

#include "sscope/types.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace sscope::nn {

using Index = Eigen::Index;

enum class Activation { relu, softplus };
enum class LossKind { cross_entropy, mean_squared_error };

std::string_view to_string(Activation a);
std::string_view to_string(LossKind k);
Activation parse_activation(std::string_view s);
LossKind parse_loss_kind(std::string_view s);

struct LayerLayout {
  Index fan_in = 0;
  Index fan_out = 0;
  Index weight_offset = 0;
  Index bias_offset = -1;  // -1 when the layer has no bias

  Index weight_count() const { return fan_in * fan_out; }
  bool has_bias() const { return bias_offset >= 0; }
};

struct ModelSpec {
  Index input_dim = 0;
  std::vector<Index> hidden_widths;
  Index num_outputs = 0;
  Activation activation = Activation::relu;
  bool use_bias = true;
  LossKind loss_kind = LossKind::cross_entropy;

  /// Throws InvalidArgument when some width is not positive.
  void validate() const;
  Index parameter_count() const;
  std::vector<LayerLayout> layout() const;

  bool operator==(const ModelSpec&) const = default;
};

/// A set of samples. Classification batches fill `labels`; regression batches
/// fill `targets` with one row per sample.
struct Batch {
  Matrix inputs;
  std::vector<std::int32_t> labels;
  Matrix targets;

  Index size() const { return inputs.rows(); }

  /// Gathers the given rows into a new batch.
  Batch rows(const std::vector<Index>& indices) const;
};

/// Checks batch shapes and label ranges against the spec.
void check_batch(const ModelSpec& spec, const Batch& batch);

/// Scaled-uniform init: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases.
ParamVector init_params(const ModelSpec& spec, std::uint64_t seed);

/// Network outputs (logits for classification), one row per input.
Matrix forward(const ModelSpec& spec, const ParamVector& params, const Matrix& inputs);

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;  // fraction of argmax hits; 0 for regression
};

double loss(const ModelSpec& spec, const ParamVector& params, const Batch& batch);
Evaluation evaluate(const ModelSpec& spec, const ParamVector& params, const Batch& batch);
ParamVector gradient(const ModelSpec& spec, const ParamVector& params, const Batch& batch);
ParamVector hvp(const ModelSpec& spec, const ParamVector& params, const Batch& batch,
                const ParamVector& v);

/// Hessian of the loss at a fixed point, applied matrix-free.
///
/// Construction runs one forward and backward pass over the batch and keeps
/// the intermediate activations, so every apply() costs a single
/// forward-over-reverse sweep. The batch must outlive the operator.
///
/// Work is split into fixed-size row shards. Shard partial sums are reduced
/// in shard order, so results are bit-identical for any worker count.
class HessianOperator {
 public:
  static constexpr Index kShardRows = 1024;

  HessianOperator(const ModelSpec& spec, const ParamVector& params, const Batch& batch);
  ~HessianOperator();
  HessianOperator(HessianOperator&&) noexcept;
  HessianOperator& operator=(HessianOperator&&) noexcept;

  Index dim() const { return gradient_.size(); }
  double loss() const { return loss_; }
  double accuracy() const { return accuracy_; }
  const ParamVector& gradient() const { return gradient_; }

  /// H * v.
  ParamVector apply(const ParamVector& v) const;
  ParamVector operator()(const ParamVector& v) const { return apply(v); }

 private:
  struct Shard;

  ModelSpec spec_;
  std::vector<LayerLayout> layout_;
  ParamVector params_;
  const Batch* batch_ = nullptr;
  std::vector<Shard> shards_;
  double loss_ = 0.0;
  double accuracy_ = 0.0;
  ParamVector gradient_;
};

}  // namespace sscope::nn
