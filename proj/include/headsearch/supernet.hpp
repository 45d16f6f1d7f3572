#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "headsearch/search_space.hpp"

namespace headsearch {

enum class CellRole { Encoder, Predictor };

inline constexpr std::size_t kMaxEncoderDepth = 6;
inline constexpr std::size_t kMaxPredictorDepth = 4;

std::size_t max_depth(CellRole role);

// Widths of a searchable cell: layer 0 reads `input`, the last layer writes
// `output`, every other boundary has width `hidden`.
struct CellDims {
  std::size_t input = 0;
  std::size_t hidden = 0;
  std::size_t output = 0;

  std::size_t layer_in(std::size_t layer) const { return layer == 0 ? input : hidden; }
  std::size_t layer_out(std::size_t layer, std::size_t depth) const { return layer + 1 == depth ? output : hidden; }

  friend bool operator==(const CellDims&, const CellDims&) = default;
};

// Widths shared by the searched supernet and the materialized heads.
struct HeadDims {
  std::size_t feature = 128;           // backbone output
  std::size_t hidden = 128;            // encoder hidden width
  std::size_t output = 64;             // projector output
  std::size_t predictor_hidden = 64;   // predictor hidden width

  CellDims encoder() const { return {feature, hidden, output}; }
  CellDims predictor() const { return {output, predictor_hidden, output}; }

  friend bool operator==(const HeadDims&, const HeadDims&) = default;
};

// softmax(alpha)-weighted sum of one block per catalog kind.
class MixedLayer : public Module {
 public:
  MixedLayer(std::vector<LayerBlock> blocks, Tensor alpha);

  Tensor forward(const Tensor& x, Mode mode) override;
  // Model weights of every candidate block; alpha is excluded.
  std::vector<Tensor> parameters() override;
  std::vector<Tensor> buffers() override;

  Tensor& alpha() { return alpha_; }
  const Tensor& alpha() const { return alpha_; }
  // Current softmax(alpha), detached.
  std::vector<float> op_weights() const;

  std::vector<LayerBlock>& blocks() { return blocks_; }
  const std::vector<LayerBlock>& blocks() const { return blocks_; }
  std::size_t dim_in() const { return blocks_.front().dim_in(); }
  std::size_t dim_out() const { return blocks_.front().dim_out(); }

 private:
  std::vector<LayerBlock> blocks_;
  Tensor alpha_;
};

Tensor mixed_forward(MixedLayer& layer, const Tensor& x, Mode mode);

// Linear sequence of mixed layers (encoder head or predictor).
class MixedCell : public Module {
 public:
  MixedCell(CellRole role, SearchSpace space, CellDims dims, std::vector<MixedLayer> layers);

  Tensor forward(const Tensor& x, Mode mode) override;
  std::vector<Tensor> parameters() override;
  std::vector<Tensor> buffers() override;
  std::vector<Tensor> arch_parameters();

  CellRole role() const { return role_; }
  SearchSpace space() const { return space_; }
  const CellDims& dims() const { return dims_; }
  std::size_t depth() const { return layers_.size(); }
  std::vector<MixedLayer>& layers() { return layers_; }
  const std::vector<MixedLayer>& layers() const { return layers_; }

 private:
  CellRole role_;
  SearchSpace space_;
  CellDims dims_;
  std::vector<MixedLayer> layers_;
};

// Alphas start at zero plus N(0, 1e-3) noise. Throws ConfigError when depth
// exceeds the role's maximum (6 encoder, 4 predictor) or is zero.
MixedCell build_cell(CellRole role, std::size_t depth, CellDims dims, SearchSpace space, std::uint64_t seed);

Tensor cell_forward(MixedCell& cell, const Tensor& x, Mode mode);

struct Genotype {
  std::vector<OperationKind> encoder;
  std::optional<std::vector<OperationKind>> predictor;
  SearchSpace space = SearchSpace::S;
  std::uint64_t seed = 0;
  long search_epochs = 0;

  friend bool operator==(const Genotype&, const Genotype&) = default;
};

// Per-layer argmax of alpha, ties to the lowest catalog index.
Genotype parse_genotype(const MixedCell& encoder, const MixedCell* predictor, std::uint64_t seed, long search_epochs);

// Share of identity entries across both cells.
double skip_fraction(const Genotype& g);

// Throws FormatError when lengths or kinds violate the genotype contract.
void validate_genotype(const Genotype& g);

std::string genotype_to_json(const Genotype& g);
Genotype genotype_from_json(const std::string& text);
void save_genotype(const Genotype& g, const std::filesystem::path& path);
Genotype load_genotype(const std::filesystem::path& path);

// Discrete stack of blocks derived from a genotype. Identity entries are
// dropped unless they sit at a width-changing position, where only the
// adapter remains.
class Head : public Module {
 public:
  Head(std::vector<OperationKind> ops, std::vector<LayerBlock> blocks);

  Tensor forward(const Tensor& x, Mode mode) override;
  std::vector<Tensor> parameters() override;
  std::vector<Tensor> buffers() override;

  std::size_t depth() const { return ops_.size(); }
  std::size_t effective_depth() const;
  const std::vector<OperationKind>& ops() const { return ops_; }
  std::vector<LayerBlock>& blocks() { return blocks_; }

 private:
  std::vector<OperationKind> ops_;
  std::vector<LayerBlock> blocks_;
};

struct MaterializedHeads {
  Head encoder;
  std::optional<Head> predictor;
};

// Fresh parameters for the discrete architecture.
MaterializedHeads materialize(const Genotype& g, const HeadDims& dims, std::uint64_t seed);

}  // namespace headsearch
