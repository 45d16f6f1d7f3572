#include "headsearch/search_space.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "headsearch/error.hpp"
#include "headsearch/rng.hpp"

namespace headsearch {

namespace {

constexpr std::array kFullCatalog{OperationKind::LinBnReLU,  OperationKind::LinBnHardswish, OperationKind::LinBnSiLU,
                                  OperationKind::LinBnELU,   OperationKind::MaxPool3Bn,     OperationKind::AvgPool3Bn,
                                  OperationKind::Identity};
constexpr std::array kNoPoolCatalog{OperationKind::LinBnReLU, OperationKind::LinBnHardswish, OperationKind::LinBnSiLU,
                                    OperationKind::LinBnELU, OperationKind::Identity};

constexpr std::array<std::string_view, 7> kNames{"lin_bn_relu", "lin_bn_hardswish", "lin_bn_silu", "lin_bn_elu",
                                                 "max_pool_3_bn", "avg_pool_3_bn", "identity"};

ops::Activation activation_of(OperationKind kind) {
  switch (kind) {
    case OperationKind::LinBnHardswish: return ops::Activation::Hardswish;
    case OperationKind::LinBnSiLU: return ops::Activation::SiLU;
    case OperationKind::LinBnELU: return ops::Activation::ELU;
    default: return ops::Activation::ReLU;
  }
}

LinearParams fresh_linear(std::size_t din, std::size_t dout, Rng& rng) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(din));
  std::uniform_real_distribution<float> dist(-bound, bound);
  std::vector<float> w(din * dout);
  for (float& v : w) v = dist(rng);
  return LinearParams{Tensor::from_values({din, dout}, std::move(w), true), Tensor::zeros({dout}, true)};
}

BatchNormParams fresh_bn(std::size_t features) {
  return BatchNormParams{Tensor::full({features}, 1.0f, true), Tensor::zeros({features}, true),
                         ops::RunningStats::fresh(features)};
}

LayerBlock build_block(OperationKind kind, std::size_t dim_in, std::size_t dim_out, bool predictor_final,
                       std::uint64_t seed, bool allow_adapter) {
  if (dim_in == 0 || dim_out == 0) throw ShapeError("block dimensions must be positive");
  const bool shape_preserving = !is_linear_kind(kind);
  if (shape_preserving && dim_in != dim_out && !allow_adapter) {
    throw ShapeError(std::string(kind_name(kind)) + " requires dim_in == dim_out, got " + std::to_string(dim_in) +
                     " -> " + std::to_string(dim_out));
  }
  Rng rng = make_rng(seed, static_cast<std::uint64_t>(kind));
  std::optional<LinearParams> linear, adapter;
  std::optional<BatchNormParams> bn;
  if (is_linear_kind(kind)) {
    linear = fresh_linear(dim_in, dim_out, rng);
    if (!predictor_final) bn = fresh_bn(dim_out);
  } else if (is_pooling_kind(kind) && !predictor_final) {
    bn = fresh_bn(dim_in);
  }
  if (shape_preserving && dim_in != dim_out) adapter = fresh_linear(dim_in, dim_out, rng);
  return LayerBlock(kind, dim_in, dim_out, predictor_final, std::move(linear), std::move(bn), std::move(adapter));
}

}  // namespace

std::span<const OperationKind> catalog(SearchSpace space) {
  if (space == SearchSpace::S) return kFullCatalog;
  return kNoPoolCatalog;
}

bool in_space(OperationKind kind, SearchSpace space) {
  auto cat = catalog(space);
  return std::find(cat.begin(), cat.end(), kind) != cat.end();
}

bool is_linear_kind(OperationKind kind) {
  return kind == OperationKind::LinBnReLU || kind == OperationKind::LinBnHardswish ||
         kind == OperationKind::LinBnSiLU || kind == OperationKind::LinBnELU;
}

bool is_pooling_kind(OperationKind kind) {
  return kind == OperationKind::MaxPool3Bn || kind == OperationKind::AvgPool3Bn;
}

std::string_view kind_name(OperationKind kind) { return kNames.at(static_cast<std::size_t>(kind)); }

OperationKind kind_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (kNames[i] == name) return static_cast<OperationKind>(i);
  }
  throw FormatError("unknown operation kind '" + std::string(name) + "'");
}

std::string_view space_name(SearchSpace space) { return space == SearchSpace::S ? "S" : "S_prime"; }

SearchSpace space_from_name(std::string_view name) {
  if (name == "S") return SearchSpace::S;
  if (name == "S_prime") return SearchSpace::SPrime;
  throw FormatError("unknown search space '" + std::string(name) + "'");
}

LayerBlock::LayerBlock(OperationKind kind, std::size_t dim_in, std::size_t dim_out, bool predictor_final,
                       std::optional<LinearParams> linear, std::optional<BatchNormParams> bn,
                       std::optional<LinearParams> adapter)
    : kind_(kind),
      dim_in_(dim_in),
      dim_out_(dim_out),
      predictor_final_(predictor_final),
      linear_(std::move(linear)),
      bn_(std::move(bn)),
      adapter_(std::move(adapter)) {}

Tensor LayerBlock::forward(const Tensor& x, Mode mode) {
  if (x.rank() != 2 || x.dim(1) != dim_in_) {
    throw ShapeError(std::string(kind_name(kind_)) + " block expects [B x " + std::to_string(dim_in_) + "], got " +
                     shape_str(x.shape()));
  }
  Tensor y = x;
  if (linear_) y = ops::linear(y, linear_->weight, linear_->bias);
  if (is_pooling_kind(kind_)) {
    y = ops::pool1d(y, kind_ == OperationKind::MaxPool3Bn ? ops::Pool::Max : ops::Pool::Avg);
  }
  if (bn_) y = ops::batchnorm(y, bn_->gamma, bn_->beta, bn_->stats, mode);
  if (activation_enabled()) y = ops::activation(y, activation_of(kind_));
  if (adapter_) y = ops::linear(y, adapter_->weight, adapter_->bias);
  return y;
}

std::vector<Tensor> LayerBlock::parameters() {
  std::vector<Tensor> out;
  if (linear_) out.insert(out.end(), {linear_->weight, linear_->bias});
  if (bn_) out.insert(out.end(), {bn_->gamma, bn_->beta});
  if (adapter_) out.insert(out.end(), {adapter_->weight, adapter_->bias});
  return out;
}

std::vector<Tensor> LayerBlock::buffers() {
  if (!bn_) return {};
  return {bn_->stats.mean, bn_->stats.var};
}

LayerBlock instantiate_block(OperationKind kind, std::size_t dim_in, std::size_t dim_out, bool predictor_final,
                             std::uint64_t seed) {
  return build_block(kind, dim_in, dim_out, predictor_final, seed, false);
}

LayerBlock instantiate_adapted_block(OperationKind kind, std::size_t dim_in, std::size_t dim_out,
                                     bool predictor_final, std::uint64_t seed) {
  return build_block(kind, dim_in, dim_out, predictor_final, seed, true);
}

Tensor block_forward(LayerBlock& block, const Tensor& x, Mode mode) { return block.forward(x, mode); }

}  // namespace headsearch
