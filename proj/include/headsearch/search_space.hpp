#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>

#include "headsearch/module.hpp"

namespace headsearch {

// Candidate operation blocks, in canonical catalog order.
enum class OperationKind : std::uint8_t {
  LinBnReLU,
  LinBnHardswish,
  LinBnSiLU,
  LinBnELU,
  MaxPool3Bn,
  AvgPool3Bn,
  Identity,
};

// S: all seven blocks. SPrime: S without the two pooling blocks.
enum class SearchSpace { S, SPrime };

std::span<const OperationKind> catalog(SearchSpace space);
bool in_space(OperationKind kind, SearchSpace space);

bool is_linear_kind(OperationKind kind);
bool is_pooling_kind(OperationKind kind);

// Serialization names, e.g. "lin_bn_relu", "identity".
std::string_view kind_name(OperationKind kind);
OperationKind kind_from_name(std::string_view name);
// "S" / "S_prime".
std::string_view space_name(SearchSpace space);
SearchSpace space_from_name(std::string_view name);

struct LinearParams {
  Tensor weight;  // [d_in x d_out]
  Tensor bias;    // [d_out]
};

struct BatchNormParams {
  Tensor gamma;
  Tensor beta;
  ops::RunningStats stats;
};

// One concrete candidate operation at one layer position.
//
// Linear kinds run linear -> BN -> activation; pooling kinds run pool -> BN;
// identity passes through. In the predictor's final layer BN is dropped and
// linear kinds also drop the activation. Shape-preserving kinds placed at a
// position with dim_in != dim_out carry a plain linear adapter.
class LayerBlock : public Module {
 public:
  LayerBlock(OperationKind kind, std::size_t dim_in, std::size_t dim_out, bool predictor_final,
             std::optional<LinearParams> linear, std::optional<BatchNormParams> bn,
             std::optional<LinearParams> adapter);

  Tensor forward(const Tensor& x, Mode mode) override;
  std::vector<Tensor> parameters() override;
  std::vector<Tensor> buffers() override;

  OperationKind kind() const { return kind_; }
  std::size_t dim_in() const { return dim_in_; }
  std::size_t dim_out() const { return dim_out_; }
  bool bn_enabled() const { return bn_.has_value(); }
  bool activation_enabled() const { return is_linear_kind(kind_) && !predictor_final_; }
  bool has_adapter() const { return adapter_.has_value(); }

  LinearParams* linear() { return linear_ ? &*linear_ : nullptr; }
  BatchNormParams* batchnorm() { return bn_ ? &*bn_ : nullptr; }
  LinearParams* adapter() { return adapter_ ? &*adapter_ : nullptr; }

 private:
  OperationKind kind_;
  std::size_t dim_in_, dim_out_;
  bool predictor_final_;
  std::optional<LinearParams> linear_;
  std::optional<BatchNormParams> bn_;
  std::optional<LinearParams> adapter_;
};

// Builds a block with fresh parameters: fan-in uniform weights in
// +-1/sqrt(dim_in), zero bias, unit gamma, zero beta. Identity and pooling
// kinds require dim_in == dim_out.
LayerBlock instantiate_block(OperationKind kind, std::size_t dim_in, std::size_t dim_out, bool predictor_final,
                             std::uint64_t seed);

// As instantiate_block, but shape-preserving kinds at a dimension-changing
// position get a linear adapter instead of raising.
LayerBlock instantiate_adapted_block(OperationKind kind, std::size_t dim_in, std::size_t dim_out,
                                     bool predictor_final, std::uint64_t seed);

Tensor block_forward(LayerBlock& block, const Tensor& x, Mode mode);

}  // namespace headsearch
