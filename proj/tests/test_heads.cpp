#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include "headsearch/error.hpp"
#include "headsearch/search_space.hpp"
#include "headsearch/supernet.hpp"
#include "support/gradcheck.hpp"

using namespace headsearch;
using ops::Mode;

namespace {

Tensor random_input(std::uint64_t seed, std::size_t b, std::size_t d) {
  std::mt19937_64 rng(seed);
  return Tensor::from_values({b, d}, gc::uniform(rng, b * d, -2.0f, 2.0f));
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.values().data(), b.values().data(), a.numel() * sizeof(float)) == 0;
}

void set_alpha(MixedLayer& layer, std::vector<float> v) {
  std::copy(v.begin(), v.end(), layer.alpha().values().begin());
}

}  // namespace

// ---- catalog ----

TEST(Catalog, SizesAndPoolingRemoval) {
  EXPECT_EQ(catalog(SearchSpace::S).size(), 7u);
  EXPECT_EQ(catalog(SearchSpace::SPrime).size(), 5u);
  for (OperationKind k : catalog(SearchSpace::SPrime)) {
    EXPECT_FALSE(is_pooling_kind(k));
    EXPECT_TRUE(in_space(k, SearchSpace::S));
  }
  EXPECT_FALSE(in_space(OperationKind::MaxPool3Bn, SearchSpace::SPrime));
  EXPECT_FALSE(in_space(OperationKind::AvgPool3Bn, SearchSpace::SPrime));
}

TEST(Catalog, Deterministic) {
  auto a = catalog(SearchSpace::S), b = catalog(SearchSpace::S);
  EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin(), b.end()));
}

TEST(Catalog, NamesRoundTrip) {
  for (OperationKind k : catalog(SearchSpace::S)) EXPECT_EQ(kind_from_name(kind_name(k)), k);
  EXPECT_THROW(kind_from_name("conv_3x3"), FormatError);
  EXPECT_EQ(space_from_name("S_prime"), SearchSpace::SPrime);
  EXPECT_EQ(space_name(SearchSpace::S), "S");
}

// ---- blocks ----

TEST(Block, IdentityHasNoParametersAndPassesThrough) {
  LayerBlock b = instantiate_block(OperationKind::Identity, 64, 64, false, 1);
  EXPECT_TRUE(b.parameters().empty());
  EXPECT_TRUE(b.buffers().empty());
  Tensor x = random_input(2, 3, 64);
  EXPECT_TRUE(bitwise_equal(block_forward(b, x, Mode::Train), x));
}

TEST(Block, PredictorFinalDropsBatchNorm) {
  LayerBlock b = instantiate_block(OperationKind::LinBnReLU, 64, 64, true, 1);
  EXPECT_FALSE(b.bn_enabled());
  EXPECT_FALSE(b.activation_enabled());
  EXPECT_TRUE(instantiate_block(OperationKind::LinBnReLU, 64, 64, false, 1).bn_enabled());
}

TEST(Block, PoolingRequiresEqualWidths) {
  EXPECT_THROW(instantiate_block(OperationKind::AvgPool3Bn, 64, 32, false, 1), ShapeError);
  EXPECT_THROW(instantiate_block(OperationKind::Identity, 64, 32, false, 1), ShapeError);
  LayerBlock adapted = instantiate_adapted_block(OperationKind::AvgPool3Bn, 64, 32, false, 1);
  EXPECT_TRUE(adapted.has_adapter());
  EXPECT_EQ(block_forward(adapted, random_input(3, 4, 64), Mode::Train).shape(), (Shape{4, 32}));
}

TEST(Block, FanInInitialization) {
  LayerBlock b = instantiate_block(OperationKind::LinBnSiLU, 16, 8, false, 9);
  const float bound = 1.0f / std::sqrt(16.0f);
  for (float w : b.linear()->weight.values()) EXPECT_LE(std::abs(w), bound);
  for (float v : b.linear()->bias.values()) EXPECT_EQ(v, 0.0f);
  for (float g : b.batchnorm()->gamma.values()) EXPECT_EQ(g, 1.0f);
}

TEST(Block, LinBnReLUWithIdentityWeightsIsReLU) {
  // Columns with zero mean and unit (biased) variance pass BN unchanged.
  LayerBlock b = instantiate_block(OperationKind::LinBnReLU, 2, 2, false, 1);
  auto w = b.linear()->weight.values();
  std::fill(w.begin(), w.end(), 0.0f);
  w[0] = w[3] = 1.0f;
  Tensor x = Tensor::from_values({2, 2}, {1.0f, -1.0f, -1.0f, 1.0f});
  Tensor y = block_forward(b, x, Mode::Train);
  const float expect[4] = {1.0f, 0.0f, 0.0f, 1.0f};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y.at(i), expect[i], 1e-5);
}

TEST(Block, MaxPoolWithNeutralBatchNormIsPool) {
  LayerBlock b = instantiate_block(OperationKind::MaxPool3Bn, 6, 6, false, 1);
  Tensor x = random_input(4, 3, 6);
  Tensor y = block_forward(b, x, Mode::Eval);  // fresh stats: mean 0, var 1
  Tensor p = ops::pool1d(x, ops::Pool::Max);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y.at(i), p.at(i), 1e-5);
}

TEST(Block, BatchNormFlagAcrossAllPositionsProperty) {
  for (SearchSpace space : {SearchSpace::S, SearchSpace::SPrime}) {
    MixedCell enc = build_cell(CellRole::Encoder, 6, {12, 8, 4}, space, 1);
    MixedCell pred = build_cell(CellRole::Predictor, 4, {4, 6, 4}, space, 2);
    for (const MixedLayer& l : enc.layers())
      for (const LayerBlock& b : l.blocks()) EXPECT_EQ(b.bn_enabled(), b.kind() != OperationKind::Identity);
    for (std::size_t i = 0; i < pred.depth(); ++i) {
      const bool final_layer = i + 1 == pred.depth();
      for (const LayerBlock& b : pred.layers()[i].blocks()) {
        EXPECT_EQ(b.bn_enabled(), !final_layer && b.kind() != OperationKind::Identity);
      }
    }
  }
}

// ---- cells ----

TEST(Cell, DepthBounds) {
  MixedCell e = build_cell(CellRole::Encoder, 6, {16, 16, 8}, SearchSpace::S, 1);
  EXPECT_EQ(e.depth(), 6u);
  for (const auto& l : e.layers()) EXPECT_EQ(l.blocks().size(), 7u);
  MixedCell p = build_cell(CellRole::Predictor, 4, {8, 8, 8}, SearchSpace::S, 1);
  EXPECT_EQ(p.depth(), 4u);
  EXPECT_THROW(build_cell(CellRole::Encoder, 7, {16, 16, 8}, SearchSpace::S, 1), ConfigError);
  EXPECT_THROW(build_cell(CellRole::Predictor, 5, {8, 8, 8}, SearchSpace::S, 1), ConfigError);
  EXPECT_THROW(build_cell(CellRole::Encoder, 0, {16, 16, 8}, SearchSpace::S, 1), ConfigError);
}

TEST(Cell, AlphaInitIsSmallNoise) {
  MixedCell e = build_cell(CellRole::Encoder, 6, {16, 16, 8}, SearchSpace::S, 3);
  double sq = 0;
  std::size_t n = 0;
  for (const auto& l : e.layers())
    for (float a : l.alpha().values()) {
      EXPECT_LT(std::abs(a), 1e-2);
      sq += a * a;
      ++n;
    }
  EXPECT_GT(sq, 0.0);
  EXPECT_NEAR(std::sqrt(sq / n), 1e-3, 5e-4);
}

TEST(MixedForward, UniformAlphaIsMeanOfBlocks) {
  MixedCell cell = build_cell(CellRole::Encoder, 1, {8, 8, 8}, SearchSpace::S, 5);
  MixedLayer& layer = cell.layers()[0];
  set_alpha(layer, std::vector<float>(7, 0.3f));
  Tensor x = random_input(6, 5, 8);
  Tensor y = mixed_forward(layer, x, Mode::Eval);
  std::vector<double> mean(y.numel(), 0.0);
  for (LayerBlock& b : layer.blocks()) {
    Tensor o = block_forward(b, x, Mode::Eval);
    for (std::size_t i = 0; i < o.numel(); ++i) mean[i] += o.at(i) / 7.0;
  }
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y.at(i), mean[i], 1e-5);
}

TEST(MixedForward, SaturatedAlphaSelectsBlock) {
  MixedCell cell = build_cell(CellRole::Encoder, 1, {8, 8, 8}, SearchSpace::S, 7);
  MixedLayer& layer = cell.layers()[0];
  Tensor x = random_input(8, 5, 8);
  for (std::size_t j = 0; j < 7; ++j) {
    std::vector<float> a(7, 0.0f);
    a[j] = 40.0f;
    set_alpha(layer, a);
    Tensor y = mixed_forward(layer, x, Mode::Eval);
    Tensor o = block_forward(layer.blocks()[j], x, Mode::Eval);
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y.at(i), o.at(i), 1e-4) << "block " << j;
  }
}

TEST(MixedForward, OpWeightsSumToOne) {
  std::mt19937_64 rng(9);
  MixedCell cell = build_cell(CellRole::Predictor, 4, {8, 8, 8}, SearchSpace::SPrime, 9);
  for (int s = 0; s < 50; ++s) {
    for (MixedLayer& l : cell.layers()) {
      set_alpha(l, gc::uniform(rng, l.alpha().numel(), -10.0f, 10.0f));
      const auto w = l.op_weights();
      double total = 0;
      for (float v : w) total += v;
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(CellForward, OneLayerCellIsMixedForward) {
  MixedCell cell = build_cell(CellRole::Encoder, 1, {8, 8, 8}, SearchSpace::S, 11);
  Tensor x = random_input(12, 4, 8);
  EXPECT_TRUE(bitwise_equal(cell_forward(cell, x, Mode::Eval), mixed_forward(cell.layers()[0], x, Mode::Eval)));
}

TEST(CellForward, SaturatedIdentityCellIsIdentity) {
  MixedCell cell = build_cell(CellRole::Encoder, 6, {8, 8, 8}, SearchSpace::S, 13);
  const auto kinds = catalog(SearchSpace::S);
  const auto id = static_cast<std::size_t>(std::find(kinds.begin(), kinds.end(), OperationKind::Identity) - kinds.begin());
  for (MixedLayer& l : cell.layers()) {
    std::vector<float> a(7, 0.0f);
    a[id] = 40.0f;
    set_alpha(l, a);
  }
  Tensor x = random_input(14, 4, 8);
  Tensor y = cell_forward(cell, x, Mode::Eval);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y.at(i), x.at(i), 1e-4);
}

TEST(CellForward, DeterministicInEvalMode) {
  MixedCell a = build_cell(CellRole::Encoder, 3, {8, 8, 4}, SearchSpace::S, 15);
  MixedCell b = build_cell(CellRole::Encoder, 3, {8, 8, 4}, SearchSpace::S, 15);
  Tensor x = random_input(16, 4, 8);
  EXPECT_TRUE(bitwise_equal(cell_forward(a, x, Mode::Eval), cell_forward(b, x, Mode::Eval)));
}

// ---- genotype ----

TEST(Genotype, ArgmaxAndTieBreak) {
  MixedCell cell = build_cell(CellRole::Encoder, 2, {8, 8, 8}, SearchSpace::S, 17);
  set_alpha(cell.layers()[0], {0.1f, 0.9f, 0.0f, 0.0f, 0.0f, 0.0f, 0.0f});
  set_alpha(cell.layers()[1], {0.0f, 0.0f, 0.5f, 0.0f, 0.0f, 0.5f, 0.0f});
  Genotype g = parse_genotype(cell, nullptr, 1, 1);
  const auto kinds = catalog(SearchSpace::S);
  EXPECT_EQ(g.encoder[0], kinds[1]);
  EXPECT_EQ(g.encoder[1], kinds[2]);
  EXPECT_FALSE(g.predictor.has_value());
}

TEST(Genotype, ShiftInvariantProperty) {
  std::mt19937_64 rng(19);
  MixedCell cell = build_cell(CellRole::Encoder, 6, {8, 8, 8}, SearchSpace::S, 19);
  for (int s = 0; s < 100; ++s) {
    for (MixedLayer& l : cell.layers()) set_alpha(l, gc::uniform(rng, 7, -3.0f, 3.0f));
    const Genotype before = parse_genotype(cell, nullptr, 0, 0);
    for (MixedLayer& l : cell.layers()) {
      // Power-of-two shifts are exact in float, so ties stay ties.
      const float c = std::ldexp(1.0f, static_cast<int>(rng() % 4));
      for (float& a : l.alpha().values()) a += c;
    }
    EXPECT_EQ(parse_genotype(cell, nullptr, 0, 0), before);
  }
}

TEST(Genotype, JsonRoundTripProperty) {
  std::mt19937_64 rng(21);
  for (int s = 0; s < 200; ++s) {
    Genotype g;
    g.space = rng() % 2 ? SearchSpace::S : SearchSpace::SPrime;
    const auto kinds = catalog(g.space);
    g.encoder.resize(1 + rng() % 6);
    for (auto& k : g.encoder) k = kinds[rng() % kinds.size()];
    if (rng() % 3) {
      g.predictor.emplace(1 + rng() % 4);
      for (auto& k : *g.predictor) k = kinds[rng() % kinds.size()];
    }
    g.seed = rng();
    g.search_epochs = static_cast<long>(rng() % 1000);
    EXPECT_EQ(genotype_from_json(genotype_to_json(g)), g);
  }
}

TEST(Genotype, JsonSchemaIsStrict) {
  const std::string ok =
      R"({"encoder": ["lin_bn_relu"], "predictor": null, "space": "S", "seed": 3, "search_epochs": 1})";
  EXPECT_NO_THROW(genotype_from_json(ok));
  EXPECT_THROW(genotype_from_json(R"({"encoder": ["lin_bn_relu"], "space": "S", "seed": 3, "search_epochs": 1})"),
               FormatError);
  EXPECT_THROW(genotype_from_json(R"({"encoder": ["lin_bn_relu"], "predictor": null, "space": "S", "seed": 3,
                                      "search_epochs": 1, "extra": 0})"),
               FormatError);
  EXPECT_THROW(genotype_from_json(R"({"encoder": ["max_pool_3_bn"], "predictor": null, "space": "S_prime",
                                      "seed": 3, "search_epochs": 1})"),
               FormatError);
  EXPECT_THROW(genotype_from_json(R"({"encoder": ["identity","identity","identity","identity","identity",
                                      "identity","identity"], "predictor": null, "space": "S", "seed": 3,
                                      "search_epochs": 1})"),
               FormatError);
  EXPECT_THROW(genotype_from_json("[1, 2"), FormatError);
}

TEST(Genotype, SkipFraction) {
  Genotype g;
  g.encoder.assign(6, OperationKind::LinBnReLU);
  g.predictor.emplace(4, OperationKind::LinBnELU);
  EXPECT_EQ(skip_fraction(g), 0.0);
  g.encoder[0] = g.encoder[3] = OperationKind::Identity;
  EXPECT_DOUBLE_EQ(skip_fraction(g), 0.2);
  g.encoder[1] = g.encoder[2] = OperationKind::Identity;
  (*g.predictor)[1] = OperationKind::Identity;
  EXPECT_DOUBLE_EQ(skip_fraction(g), 0.5);
}

// ---- materialize ----

TEST(Materialize, AllIdentityHeadIsIdentityMap) {
  Genotype g;
  g.encoder.assign(6, OperationKind::Identity);
  g.predictor.emplace(4, OperationKind::Identity);
  HeadDims dims{8, 8, 8, 8};
  MaterializedHeads h = materialize(g, dims, 1);
  EXPECT_EQ(h.encoder.effective_depth(), 0u);
  Tensor x = random_input(23, 3, 8);
  EXPECT_TRUE(bitwise_equal(h.encoder.forward(x, Mode::Train), x));
  EXPECT_TRUE(bitwise_equal(h.predictor->forward(x, Mode::Train), x));
}

TEST(Materialize, EffectiveDepthAndComposition) {
  Genotype g;
  g.encoder = {OperationKind::LinBnReLU, OperationKind::Identity, OperationKind::AvgPool3Bn,
               OperationKind::Identity, OperationKind::LinBnSiLU};
  g.predictor = std::vector<OperationKind>{OperationKind::LinBnHardswish, OperationKind::LinBnELU};
  HeadDims dims{16, 12, 6, 4};
  MaterializedHeads h = materialize(g, dims, 5);
  EXPECT_EQ(h.encoder.effective_depth(), 3u);
  EXPECT_EQ(h.encoder.depth(), 5u);
  Tensor x = random_input(25, 6, 16);
  Tensor y = h.encoder.forward(x, Mode::Train);
  EXPECT_EQ(y.shape(), (Shape{6, 6}));
  // Clone the state the composition needs; BN running stats advance per call.
  MaterializedHeads again = materialize(g, dims, 5);
  Tensor c = x;
  for (LayerBlock& b : again.encoder.blocks()) c = block_forward(b, c, Mode::Train);
  EXPECT_TRUE(bitwise_equal(y, c));
  Tensor p = h.predictor->forward(y, Mode::Train);
  EXPECT_EQ(p.shape(), (Shape{6, 6}));
  EXPECT_FALSE(h.predictor->blocks().back().bn_enabled());
}

TEST(Materialize, IdentityAtWidthChangeKeepsAdapter) {
  Genotype g;
  g.encoder = {OperationKind::LinBnReLU, OperationKind::Identity};
  HeadDims dims{16, 12, 6, 4};
  MaterializedHeads h = materialize(g, dims, 5);
  ASSERT_EQ(h.encoder.blocks().size(), 2u);
  EXPECT_TRUE(h.encoder.blocks()[1].has_adapter());
  EXPECT_EQ(h.encoder.forward(random_input(27, 4, 16), Mode::Train).shape(), (Shape{4, 6}));
}
