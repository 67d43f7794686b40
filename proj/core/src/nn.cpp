#include "sscope/nn.hpp"

#include "sscope/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace sscope::nn {

namespace {

using ConstMap = Eigen::Map<const Matrix>;

// Weight block of a layer seen as a (fan_in x fan_out) column-major matrix,
// which is the same memory as the row-major (fan_out x fan_in) layout.
ConstMap weights_t(const ParamVector& params, const LayerLayout& l) {
  return ConstMap(params.data() + l.weight_offset, l.fan_in, l.fan_out);
}

Eigen::Map<Matrix> weights_t(ParamVector& params, const LayerLayout& l) {
  return Eigen::Map<Matrix>(params.data() + l.weight_offset, l.fan_in, l.fan_out);
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

void activate(Activation a, const Matrix& pre, Matrix& out, Matrix& d1, Matrix& d2) {
  out.resize(pre.rows(), pre.cols());
  d1.resize(pre.rows(), pre.cols());
  if (a == Activation::relu) {
    out = pre.cwiseMax(0.0);
    d1 = (pre.array() > 0.0).cast<double>().matrix();
    d2.resize(0, 0);  // zero curvature away from the kink
    return;
  }
  d2.resize(pre.rows(), pre.cols());
  for (Index j = 0; j < pre.cols(); ++j) {
    for (Index i = 0; i < pre.rows(); ++i) {
      const double z = pre(i, j);
      const double s = sigmoid(z);
      out(i, j) = softplus(z);
      d1(i, j) = s;
      d2(i, j) = s * sigmoid(-z);
    }
  }
}

template <class Rows>
void add_bias(Rows& z, const ParamVector& params, const LayerLayout& l) {
  if (l.has_bias()) z.rowwise() += params.segment(l.bias_offset, l.fan_out).transpose();
}

}  // namespace

std::string_view to_string(Activation a) { return a == Activation::relu ? "relu" : "softplus"; }

std::string_view to_string(LossKind k) {
  return k == LossKind::cross_entropy ? "cross_entropy" : "mean_squared_error";
}

Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "softplus") return Activation::softplus;
  throw InvalidArgument("unknown activation '" + std::string(s) + "'");
}

LossKind parse_loss_kind(std::string_view s) {
  if (s == "cross_entropy") return LossKind::cross_entropy;
  if (s == "mean_squared_error") return LossKind::mean_squared_error;
  throw InvalidArgument("unknown loss kind '" + std::string(s) + "'");
}

void ModelSpec::validate() const {
  if (input_dim <= 0) throw InvalidArgument("model input_dim must be positive");
  if (num_outputs <= 0) throw InvalidArgument("model num_outputs must be positive");
  for (Index w : hidden_widths)
    if (w <= 0) throw InvalidArgument("model hidden widths must be positive");
  if (loss_kind == LossKind::cross_entropy && num_outputs < 2)
    throw InvalidArgument("cross-entropy models need at least two outputs");
}

std::vector<LayerLayout> ModelSpec::layout() const {
  validate();
  std::vector<LayerLayout> layers;
  Index fan_in = input_dim;
  Index offset = 0;
  std::vector<Index> widths = hidden_widths;
  widths.push_back(num_outputs);
  for (Index fan_out : widths) {
    LayerLayout l;
    l.fan_in = fan_in;
    l.fan_out = fan_out;
    l.weight_offset = offset;
    offset += l.weight_count();
    if (use_bias) {
      l.bias_offset = offset;
      offset += fan_out;
    }
    layers.push_back(l);
    fan_in = fan_out;
  }
  return layers;
}

Index ModelSpec::parameter_count() const {
  const auto layers = layout();
  const auto& last = layers.back();
  return last.has_bias() ? last.bias_offset + last.fan_out : last.weight_offset + last.weight_count();
}

Batch Batch::rows(const std::vector<Index>& indices) const {
  Batch out;
  out.inputs.resize(static_cast<Index>(indices.size()), inputs.cols());
  if (!labels.empty()) out.labels.resize(indices.size());
  if (targets.size() > 0) out.targets.resize(static_cast<Index>(indices.size()), targets.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Index r = indices[i];
    const auto ri = static_cast<Index>(i);
    out.inputs.row(ri) = inputs.row(r);
    if (!labels.empty()) out.labels[i] = labels[static_cast<std::size_t>(r)];
    if (targets.size() > 0) out.targets.row(ri) = targets.row(r);
  }
  return out;
}

void check_batch(const ModelSpec& spec, const Batch& batch) {
  if (batch.size() < 1) throw InvalidArgument("batch must contain at least one sample");
  if (batch.inputs.cols() != spec.input_dim)
    throw InvalidArgument("batch input width " + std::to_string(batch.inputs.cols()) +
                          " does not match model input_dim " + std::to_string(spec.input_dim));
  if (spec.loss_kind == LossKind::cross_entropy) {
    if (static_cast<Index>(batch.labels.size()) != batch.size())
      throw InvalidArgument("classification batch needs one label per sample");
    for (auto y : batch.labels)
      if (y < 0 || y >= spec.num_outputs)
        throw InvalidArgument("label " + std::to_string(y) + " outside [0, " +
                              std::to_string(spec.num_outputs) + ")");
  } else {
    if (batch.targets.rows() != batch.size() || batch.targets.cols() != spec.num_outputs)
      throw InvalidArgument("regression batch targets must be n x num_outputs");
  }
}

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  const auto layers = spec.layout();
  ParamVector params = ParamVector::Zero(spec.parameter_count());
  std::mt19937_64 rng(seed);
  for (const auto& l : layers) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Index i = 0; i < l.weight_count(); ++i) params[l.weight_offset + i] = dist(rng);
  }
  return params;
}

// Forward/backward cache for one row shard.
struct HessianOperator::Shard {
  Index begin = 0;
  Index rows = 0;
  std::vector<Matrix> act;    // act[l]: output of hidden layer l (post-activation)
  std::vector<Matrix> d1;     // activation first derivative at hidden layer l
  std::vector<Matrix> d2;     // activation second derivative (empty for relu)
  std::vector<Matrix> delta;  // dL/dZ for every layer l, already scaled by 1/N
  std::vector<Matrix> dact;   // dL/dA for hidden layer l
  Matrix prob;                // softmax probabilities (cross-entropy only)
  double loss_sum = 0.0;
  Index correct = 0;
  ParamVector grad;
};

namespace {

struct ShardContext {
  const ModelSpec& spec;
  const std::vector<LayerLayout>& layout;
  const ParamVector& params;
  const Batch& batch;
  double inv_n;
};

// Loss per row of logits plus dL/dZ and probabilities.
void output_loss(const ShardContext& ctx, Index begin, const Matrix& z, Matrix& delta, Matrix& prob,
                 double& loss_sum, Index& correct) {
  const Index n = z.rows();
  const Index k = z.cols();
  delta.resize(n, k);
  loss_sum = 0.0;
  correct = 0;
  if (ctx.spec.loss_kind == LossKind::mean_squared_error) {
    const auto target = ctx.batch.targets.middleRows(begin, n);
    const Matrix diff = z - target;
    loss_sum = diff.squaredNorm();
    delta = (2.0 * ctx.inv_n) * diff;
    prob.resize(0, 0);
    return;
  }
  prob.resize(n, k);
  for (Index i = 0; i < n; ++i) {
    Index arg = 0;
    for (Index j = 1; j < k; ++j)
      if (z(i, j) > z(i, arg)) arg = j;
    const double m = z(i, arg);
    double rest = 0.0;  // sum of exp(z_j - m) over j != argmax
    for (Index j = 0; j < k; ++j) {
      const double e = std::exp(z(i, j) - m);
      prob(i, j) = e;
      if (j != arg) rest += e;
    }
    const double total = 1.0 + rest;
    prob.row(i) /= total;
    const auto y = static_cast<Index>(ctx.batch.labels[static_cast<std::size_t>(begin + i)]);
    loss_sum += (m - z(i, y)) + std::log1p(rest);
    if (y == arg) ++correct;
    // p_y - 1 accumulated from the other classes to keep relative precision.
    double others = 0.0;
    for (Index j = 0; j < k; ++j) {
      if (j == y) continue;
      others += prob(i, j);
      delta(i, j) = prob(i, j) * ctx.inv_n;
    }
    delta(i, y) = -others * ctx.inv_n;
  }
}

}  // namespace

HessianOperator::HessianOperator(const ModelSpec& spec, const ParamVector& params, const Batch& batch)
    : spec_(spec), layout_(spec.layout()), params_(params), batch_(&batch) {
  const Index p = spec_.parameter_count();
  if (params_.size() != p)
    throw InvalidArgument("parameter vector has length " + std::to_string(params_.size()) +
                          ", model expects " + std::to_string(p));
  check_batch(spec_, batch);

  const Index n = batch.size();
  const std::size_t num_layers = layout_.size();
  const std::size_t num_hidden = num_layers - 1;
  const Index num_shards = (n + kShardRows - 1) / kShardRows;
  shards_.resize(static_cast<std::size_t>(num_shards));
  const ShardContext ctx{spec_, layout_, params_, batch, 1.0 / static_cast<double>(n)};

  parallel_for(shards_.size(), [&](std::size_t s) {
    Shard& sh = shards_[s];
    sh.begin = static_cast<Index>(s) * kShardRows;
    sh.rows = std::min(kShardRows, n - sh.begin);
    const auto x = batch.inputs.middleRows(sh.begin, sh.rows);
    sh.act.resize(num_hidden);
    sh.d1.resize(num_hidden);
    sh.d2.resize(num_hidden);
    sh.delta.resize(num_layers);
    sh.dact.resize(num_hidden);

    Matrix z;
    for (std::size_t l = 0; l < num_layers; ++l) {
      const auto& L = layout_[l];
      if (l == 0)
        z.noalias() = x * weights_t(params_, L);
      else
        z.noalias() = sh.act[l - 1] * weights_t(params_, L);
      add_bias(z, params_, L);
      if (l + 1 < num_layers) activate(spec_.activation, z, sh.act[l], sh.d1[l], sh.d2[l]);
    }
    if (!z.allFinite()) throw NumericOverflow("non-finite network output");
    output_loss(ctx, sh.begin, z, sh.delta.back(), sh.prob, sh.loss_sum, sh.correct);

    sh.grad = ParamVector::Zero(static_cast<Index>(params_.size()));
    for (std::size_t l = num_layers; l-- > 0;) {
      const auto& L = layout_[l];
      const Matrix& d = sh.delta[l];
      auto gw = weights_t(sh.grad, L);
      if (l == 0)
        gw.noalias() = x.transpose() * d;
      else
        gw.noalias() = sh.act[l - 1].transpose() * d;
      if (L.has_bias()) sh.grad.segment(L.bias_offset, L.fan_out) = d.colwise().sum().transpose();
      if (l > 0) {
        sh.dact[l - 1].noalias() = d * weights_t(params_, L).transpose();
        sh.delta[l - 1] = sh.dact[l - 1].cwiseProduct(sh.d1[l - 1]);
      }
    }
  });

  double loss_sum = 0.0;
  Index correct = 0;
  gradient_ = ParamVector::Zero(p);
  for (auto& sh : shards_) {
    loss_sum += sh.loss_sum;
    correct += sh.correct;
    gradient_ += sh.grad;
    sh.grad = ParamVector();
  }
  loss_ = loss_sum * ctx.inv_n;
  if (!std::isfinite(loss_)) throw NumericOverflow("non-finite loss");
  accuracy_ = spec_.loss_kind == LossKind::cross_entropy
                  ? static_cast<double>(correct) / static_cast<double>(n)
                  : 0.0;
}

HessianOperator::~HessianOperator() = default;
HessianOperator::HessianOperator(HessianOperator&&) noexcept = default;
HessianOperator& HessianOperator::operator=(HessianOperator&&) noexcept = default;

ParamVector HessianOperator::apply(const ParamVector& v) const {
  if (v.size() != dim()) throw InvalidArgument("hvp direction has wrong length");
  const std::size_t num_layers = layout_.size();
  const double inv_n = 1.0 / static_cast<double>(batch_->size());
  std::vector<ParamVector> partial(shards_.size());

  parallel_for(shards_.size(), [&](std::size_t s) {
    const Shard& sh = shards_[s];
    const auto x = batch_->inputs.middleRows(sh.begin, sh.rows);
    ParamVector out = ParamVector::Zero(dim());

    // Forward sensitivities R(Z_l) and R(A_l).
    std::vector<Matrix> rz(num_layers);
    std::vector<Matrix> ra(num_layers - 1);
    for (std::size_t l = 0; l < num_layers; ++l) {
      const auto& L = layout_[l];
      if (l == 0) {
        rz[l].noalias() = x * weights_t(v, L);
      } else {
        rz[l].noalias() = ra[l - 1] * weights_t(params_, L);
        rz[l].noalias() += sh.act[l - 1] * weights_t(v, L);
      }
      add_bias(rz[l], v, L);
      if (l + 1 < num_layers) ra[l] = rz[l].cwiseProduct(sh.d1[l]);
    }

    // R(dL/dZ) at the output.
    Matrix rdelta;
    const Matrix& rzo = rz.back();
    if (spec_.loss_kind == LossKind::mean_squared_error) {
      rdelta = (2.0 * inv_n) * rzo;
    } else {
      const Index k = rzo.cols();
      rdelta.resize(rzo.rows(), k);
      // (diag(p) - p p^T) r, written as p_i * sum_{j != i} p_j (r_i - r_j)
      // so that no entry is formed by cancellation.
      for (Index i = 0; i < rzo.rows(); ++i) {
        for (Index a = 0; a < k; ++a) {
          double acc = 0.0;
          for (Index b = 0; b < k; ++b)
            if (b != a) acc += sh.prob(i, b) * (rzo(i, a) - rzo(i, b));
          rdelta(i, a) = sh.prob(i, a) * acc * inv_n;
        }
      }
    }

    for (std::size_t l = num_layers; l-- > 0;) {
      const auto& L = layout_[l];
      auto hw = weights_t(out, L);
      if (l == 0) {
        hw.noalias() = x.transpose() * rdelta;
      } else {
        hw.noalias() = ra[l - 1].transpose() * sh.delta[l];
        hw.noalias() += sh.act[l - 1].transpose() * rdelta;
      }
      if (L.has_bias()) out.segment(L.bias_offset, L.fan_out) = rdelta.colwise().sum().transpose();
      if (l > 0) {
        Matrix rdact = rdelta * weights_t(params_, L).transpose();
        rdact.noalias() += sh.delta[l] * weights_t(v, L).transpose();
        Matrix next = rdact.cwiseProduct(sh.d1[l - 1]);
        if (sh.d2[l - 1].size() > 0)
          next += sh.d2[l - 1].cwiseProduct(rz[l - 1]).cwiseProduct(sh.dact[l - 1]);
        rdelta = std::move(next);
      }
    }
    partial[s] = std::move(out);
  });

  ParamVector result = ParamVector::Zero(dim());
  for (const auto& part : partial) result += part;
  return result;
}

Matrix forward(const ModelSpec& spec, const ParamVector& params, const Matrix& inputs) {
  const auto layers = spec.layout();
  if (params.size() != spec.parameter_count()) throw InvalidArgument("parameter vector has wrong length");
  if (inputs.cols() != spec.input_dim) throw InvalidArgument("input width does not match model");
  Matrix a = inputs;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Matrix z = a * weights_t(params, layers[l]);
    add_bias(z, params, layers[l]);
    if (l + 1 < layers.size()) {
      if (spec.activation == Activation::relu)
        a = z.cwiseMax(0.0);
      else
        a = z.unaryExpr([](double t) { return softplus(t); });
    } else {
      a = std::move(z);
    }
  }
  if (!a.allFinite()) throw NumericOverflow("non-finite network output");
  return a;
}

double loss(const ModelSpec& spec, const ParamVector& params, const Batch& batch) {
  return HessianOperator(spec, params, batch).loss();
}

Evaluation evaluate(const ModelSpec& spec, const ParamVector& params, const Batch& batch) {
  HessianOperator op(spec, params, batch);
  return {op.loss(), op.accuracy()};
}

ParamVector gradient(const ModelSpec& spec, const ParamVector& params, const Batch& batch) {
  return HessianOperator(spec, params, batch).gradient();
}

ParamVector hvp(const ModelSpec& spec, const ParamVector& params, const Batch& batch,
                const ParamVector& v) {
  return HessianOperator(spec, params, batch).apply(v);
}

}  // namespace sscope::nn
