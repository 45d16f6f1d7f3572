#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "headsearch/bilevel.hpp"
#include "headsearch/tape.hpp"

using namespace headsearch;
using namespace headsearch::search;

namespace {

SearchConfig tiny_config(std::uint64_t seed = 1) {
  SearchConfig c;
  c.epochs = 2;
  c.batch_size = 6;
  c.seed = seed;
  c.backbone.widths = {4, 4, 8};
  c.dims = HeadDims{8, 8, 4, 4};
  c.encoder_depth = 2;
  c.predictor_depth = 2;
  c.augment = false;
  return c;
}

data::Dataset tiny_data(std::uint64_t seed, std::size_t n = 12) { return data::synth_dataset(seed, n, 2, 8); }

EpochContext context(const SearchConfig& c, long epoch) {
  EpochContext ctx;
  ctx.framework = c.framework;
  ctx.policy = c.augment ? c.policy : data::AugmentPolicy::disabled();
  ctx.batch_size = c.batch_size;
  ctx.seed = c.seed;
  ctx.epoch = epoch;
  return ctx;
}

bool same_bits(const std::vector<std::vector<float>>& a, const std::vector<std::vector<float>>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size()) return false;
    if (std::memcmp(a[i].data(), b[i].data(), a[i].size() * sizeof(float)) != 0) return false;
  }
  return true;
}

// Batches in the order the engine visits them, views unaugmented.
std::vector<Tensor> batches_of(const data::Dataset& ds, std::uint64_t order_seed, long epoch, std::size_t bs) {
  const auto order = data::epoch_order(ds.length(), order_seed, static_cast<std::uint64_t>(epoch));
  std::vector<Tensor> out;
  for (const auto& batch : data::make_batches(order, bs)) {
    std::vector<std::vector<float>> imgs;
    for (std::size_t i : batch) imgs.push_back(data::normalize_image(ds.image(i), data::AugmentPolicy::disabled()));
    out.push_back(data::stack_images(imgs, ds.size));
  }
  return out;
}

std::vector<std::vector<double>> grads_of(Supernet& net, const Tensor& x, const Framework& fw,
                                          std::vector<Tensor> params) {
  for (Tensor& p : net.model_parameters()) p.release_grad();
  for (Tensor& p : net.arch_parameters()) p.release_grad();
  {
    Tape tape;
    tape.backward(framework_loss(fw, net.forward(x, x, Mode::Train)));
  }
  std::vector<std::vector<double>> out;
  for (const Tensor& p : params) {
    if (p.has_grad()) {
      out.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      out.emplace_back(p.numel(), 0.0);
    }
  }
  for (Tensor& p : net.model_parameters()) p.release_grad();
  for (Tensor& p : net.arch_parameters()) p.release_grad();
  return out;
}

}  // namespace

TEST(Bilevel, HandSteppedMicroRun) {
  SearchConfig c = tiny_config(3);
  // At lr 0.06 this 6-sample net turns 1-ulp FMA differences into >1e-5 drift within four steps.
  c.model_opt.lr = 0.02f;
  const data::Dataset val = tiny_data(10, 12), train = tiny_data(11, 12);  // two batches per pass

  Supernet net(c);
  SearchOptimizers opt = SearchOptimizers::create(net, c);

  // Oracle: a second supernet from the same seed, stepped by hand. Optimizer state is
  // kept in float32 like the engine's; the update arithmetic is written out here.
  Supernet hand(c);
  auto alphas = hand.arch_parameters();
  auto weights = hand.model_parameters();
  std::vector<std::vector<float>> m1, m2, vel;
  for (const Tensor& a : alphas) {
    m1.emplace_back(a.numel(), 0.0f);
    m2.emplace_back(a.numel(), 0.0f);
  }
  for (const Tensor& w : weights) vel.emplace_back(w.numel(), 0.0f);
  const float lr_a = c.arch_opt.lr, b1 = c.arch_opt.beta1, b2 = c.arch_opt.beta2, wd_a = c.arch_opt.weight_decay;
  const float lr_w = c.model_opt.lr, mom = c.model_opt.momentum, wd_w = c.model_opt.weight_decay;

  long t = 0;
  for (long e = 0; e < c.epochs; ++e) {
    search_epoch(net, val, train, opt, context(c, e));

    // Architecture pass: one Adam step on the alphas per val batch.
    const auto vb = batches_of(val, derive_seed(c.seed, 1), e, c.batch_size);

    ASSERT_EQ(vb.size(), 2u);
    for (const Tensor& x : vb) {
      const auto g = grads_of(hand, x, c.framework, alphas);
      ++t;
      for (std::size_t i = 0; i < alphas.size(); ++i) {
        auto a = alphas[i].values();
        for (std::size_t j = 0; j < a.size(); ++j) {
          const float gj = static_cast<float>(g[i][j]) + wd_a * a[j];
          m1[i][j] = b1 * m1[i][j] + (1 - b1) * gj;
          m2[i][j] = b2 * m2[i][j] + (1 - b2) * gj * gj;
          const double mhat = m1[i][j] / (1 - std::pow(double{b1}, static_cast<double>(t)));
          const double vhat = m2[i][j] / (1 - std::pow(double{b2}, static_cast<double>(t)));
          a[j] = static_cast<float>(a[j] - lr_a * mhat / (std::sqrt(vhat) + 1e-8));
        }
      }
    }
    // Weight pass: one momentum-SGD step on the model weights per train batch.
    for (const Tensor& x : batches_of(train, derive_seed(c.seed, 2), e, c.batch_size)) {
      const auto g = grads_of(hand, x, c.framework, weights);
      for (std::size_t i = 0; i < weights.size(); ++i) {
        auto w = weights[i].values();
        for (std::size_t j = 0; j < w.size(); ++j) {
          vel[i][j] = mom * vel[i][j] + (static_cast<float>(g[i][j]) + wd_w * w[j]);
          w[j] -= lr_w * vel[i][j];
        }
      }
    }
  }

  auto check = [](std::vector<Tensor> got, std::vector<Tensor> want, const char* what) {
    ASSERT_EQ(got.size(), want.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i)
      for (std::size_t j = 0; j < got[i].numel(); ++j)
        worst = std::max(worst, static_cast<double>(std::abs(got[i].at(j) - want[i].at(j))));
    EXPECT_LT(worst, 1e-5) << what;
  };
  check(net.arch_parameters(), hand.arch_parameters(), "alphas");
  check(net.model_parameters(), hand.model_parameters(), "weights");
  check(net.buffers(), hand.buffers(), "running stats");
  // The steps actually moved something.
  Supernet fresh(c);
  EXPECT_FALSE(same_bits(snapshot_parameters(net).alphas, snapshot_parameters(fresh).alphas));
  EXPECT_FALSE(same_bits(snapshot_parameters(net).weights, snapshot_parameters(fresh).weights));
}

TEST(Bilevel, ZeroArchLrFreezesAlphas) {
  SearchConfig c = tiny_config();
  c.arch_opt.lr = 0.0f;
  Supernet net(c);
  SearchOptimizers opt = SearchOptimizers::create(net, c);
  const auto before = snapshot_parameters(net);
  search_epoch(net, tiny_data(1), tiny_data(2), opt, context(c, 0));
  const auto after = snapshot_parameters(net);
  EXPECT_TRUE(same_bits(before.alphas, after.alphas));
  EXPECT_FALSE(same_bits(before.weights, after.weights));
}

TEST(Bilevel, ZeroModelLrFreezesWeights) {
  SearchConfig c = tiny_config();
  c.model_opt.lr = 0.0f;
  Supernet net(c);
  SearchOptimizers opt = SearchOptimizers::create(net, c);
  const auto before = snapshot_parameters(net);
  search_epoch(net, tiny_data(1), tiny_data(2), opt, context(c, 0));
  const auto after = snapshot_parameters(net);
  EXPECT_TRUE(same_bits(before.weights, after.weights));
  EXPECT_FALSE(same_bits(before.alphas, after.alphas));
}

TEST(Bilevel, PartitionAuditHolds) {
  SearchConfig c = tiny_config();
  c.augment = true;
  c.batch_size = 4;
  SearchResult r = run_search(c, tiny_data(5, 24), true);
  ASSERT_EQ(r.log.records.size(), 2u);
  for (const auto& rec : r.log.records) {
    ASSERT_TRUE(rec.partition_held.has_value());
    EXPECT_TRUE(*rec.partition_held);
  }
}

TEST(Bilevel, PartitionDetectorCatchesViolations) {
  Supernet net(tiny_config());
  const auto before = snapshot_parameters(net);
  auto leaked = before;
  leaked.weights[0][0] += 1e-3f;
  EXPECT_FALSE(grad_channels_disjoint_check(before, leaked, StepKind::Arch));
  EXPECT_TRUE(grad_channels_disjoint_check(before, leaked, StepKind::Model));
  auto moved = before;
  moved.alphas.back().back() = std::nextafter(moved.alphas.back().back(), 1.0f);
  EXPECT_FALSE(grad_channels_disjoint_check(before, moved, StepKind::Model));
  EXPECT_TRUE(grad_channels_disjoint_check(before, moved, StepKind::Arch));
}

TEST(Bilevel, Deterministic) {
  SearchConfig c = tiny_config(7);
  c.augment = true;
  c.batch_size = 4;
  const auto ds = tiny_data(8, 24);
  SearchResult a = run_search(c, ds), b = run_search(c, ds);
  EXPECT_EQ(a.genotype, b.genotype);
  ASSERT_EQ(a.log.records.size(), b.log.records.size());
  for (std::size_t i = 0; i < a.log.records.size(); ++i) {
    EXPECT_EQ(a.log.records[i].val_loss, b.log.records[i].val_loss);
    EXPECT_EQ(a.log.records[i].train_loss, b.log.records[i].train_loss);
    EXPECT_EQ(a.log.records[i].encoder_op_weights, b.log.records[i].encoder_op_weights);
  }
}

TEST(Bilevel, SingleEpochGivesValidGenotype) {
  for (FrameworkKind fk : {FrameworkKind::SimSiamLike, FrameworkKind::SimCLRLike}) {
    SearchConfig c = tiny_config(2);
    c.epochs = 1;
    c.encoder_depth = kMaxEncoderDepth;
    c.predictor_depth = kMaxPredictorDepth;
    c.framework.kind = fk;
    SearchResult r = run_search(c, tiny_data(3));
    EXPECT_EQ(r.genotype.encoder.size(), 6u);
    EXPECT_LE(r.genotype.encoder.size(), kMaxEncoderDepth);
    EXPECT_EQ(r.genotype.predictor.has_value(), fk == FrameworkKind::SimSiamLike);
    if (r.genotype.predictor) EXPECT_LE(r.genotype.predictor->size(), kMaxPredictorDepth);
    EXPECT_EQ(r.genotype.search_epochs, 1);
    EXPECT_NO_THROW(validate_genotype(r.genotype));
    EXPECT_EQ(r.log.records.size(), 1u);
  }
}

TEST(Bilevel, SPrimeSearchNeverPicksPooling) {
  SearchConfig c = tiny_config(4);
  c.space = SearchSpace::SPrime;
  SearchResult r = run_search(c, tiny_data(4));
  for (OperationKind k : r.genotype.encoder) EXPECT_FALSE(is_pooling_kind(k));
  for (OperationKind k : *r.genotype.predictor) EXPECT_FALSE(is_pooling_kind(k));
}

TEST(Bilevel, NaNLossAborts) {
  const SearchConfig c = tiny_config();
  Supernet net(c);
  SearchOptimizers opt = SearchOptimizers::create(net, c);
  net.model_parameters()[0].values()[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    search_epoch(net, tiny_data(1), tiny_data(2), opt, context(c, 0));
    FAIL() << "expected SearchAborted";
  } catch (const SearchAborted& e) {
    EXPECT_EQ(e.alphas().size(), net.arch_parameters().size());
    ASSERT_FALSE(e.batch_losses().empty());
    EXPECT_TRUE(std::isnan(e.batch_losses().back()));
  }
}

TEST(Bilevel, ConfigValidation) {
  SearchConfig c = tiny_config();
  c.encoder_depth = 7;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.dims.feature = 16;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

