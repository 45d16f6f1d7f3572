#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "headsearch/checkpoint.hpp"
#include "headsearch/config.hpp"
#include "headsearch/error.hpp"
#include "headsearch/metrics.hpp"

using namespace headsearch;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("headsearch_formats_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ExperimentConfig random_config(std::mt19937_64& rng) {
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  auto pick = [&](std::size_t lo, std::size_t hi) { return lo + rng() % (hi - lo + 1); };
  ExperimentConfig c;
  c.seed = rng();
  c.out = "runs/r" + std::to_string(rng() % 1000);
  c.data.dataset = rng() % 2 ? DatasetKind::Synthetic : DatasetKind::Cifar10;
  c.data.path = rng() % 2 ? "" : "/data/cifar-10-batches-bin";
  c.data.seed = rng() % 100;
  c.data.train_size = pick(4, 5000);
  c.data.test_size = pick(1, 1000);
  c.data.classes = pick(2, 10);
  c.data.image_size = pick(8, 64);
  c.framework = rng() % 2 ? FrameworkKind::SimSiamLike : FrameworkKind::SimCLRLike;
  c.temperature = 0.01f + unit(rng);
  c.model.backbone_widths = {pick(1, 64), pick(1, 64), pick(1, 256)};
  c.model.hidden = pick(1, 256);
  c.model.output = pick(1, 128);
  c.model.predictor_hidden = pick(1, 128);
  c.augment.crop_min = 0.05f + 0.9f * unit(rng);
  c.augment.flip = unit(rng);
  c.augment.jitter = unit(rng);
  c.augment.brightness = unit(rng);
  c.augment.contrast = unit(rng);
  c.augment.grayscale = unit(rng);
  c.search.space = rng() % 2 ? SearchSpace::S : SearchSpace::SPrime;
  c.search.epochs = static_cast<long>(pick(1, 200));
  c.search.batch_size = pick(2, 512);
  c.search.encoder_depth = pick(1, 6);
  c.search.predictor_depth = pick(1, 4);
  c.search.lr = unit(rng);
  c.search.weight_decay = 1e-3f * unit(rng);
  c.search.momentum = unit(rng);
  c.search.arch_lr = 1e-3f * unit(rng);
  c.search.arch_weight_decay = 1e-2f * unit(rng);
  c.search.augment = rng() % 2;
  c.search.split_ratio = 0.1 + 0.8 * unit(rng);
  for (PhaseOptConfig* p : {&c.pretrain.opt, &c.probe.opt}) {
    p->epochs = static_cast<long>(pick(1, 900));
    p->batch_size = pick(2, 512);
    p->lr = unit(rng) + 1e-3f;
    p->lr_min = p->lr * unit(rng);
    p->weight_decay = 1e-3f * unit(rng);
    p->momentum = unit(rng);
  }
  c.pretrain.augment = rng() % 2;
  c.ablate.seeds = pick(1, 5);
  return c;
}

}  // namespace

// ---- config ----

TEST(Config, RoundTripProperty) {
  std::mt19937_64 rng(1);
  for (int s = 0; s < 300; ++s) {
    const ExperimentConfig c = random_config(rng);
    ASSERT_NO_THROW(c.validate());
    EXPECT_EQ(parse_config(serialize_config(c)), c);
  }
}

TEST(Config, EveryKeySerializedOnce) {
  const std::string text = serialize_config(ExperimentConfig{});
  for (const std::string& key : config_keys()) {
    const std::string needle = "\n" + key + "=";
    const std::string all = "\n" + text;
    const auto first = all.find(needle);
    ASSERT_NE(first, std::string::npos) << key;
    EXPECT_EQ(all.find(needle, first + 1), std::string::npos) << key;
  }
}

TEST(Config, CommentsBlankLinesAndDefaults) {
  ExperimentConfig c = parse_config("# desk run\n\n  search.epochs = 7  # inline\nframework.kind=simclr\n");
  EXPECT_EQ(c.search.epochs, 7);
  EXPECT_EQ(c.framework, FrameworkKind::SimCLRLike);
  ExperimentConfig d;
  d.search.epochs = 7;
  d.framework = FrameworkKind::SimCLRLike;
  EXPECT_EQ(c, d);
}

TEST(Config, RejectsUnknownDuplicateAndMalformed) {
  EXPECT_THROW(parse_config("search.epoch=3\n"), ConfigError);
  EXPECT_THROW(parse_config("seed=1\nseed=2\n"), ConfigError);
  EXPECT_THROW(parse_config("seed\n"), ConfigError);
  EXPECT_THROW(parse_config("search.epochs=three\n"), ConfigError);
  EXPECT_THROW(parse_config("search.space=T\n"), ConfigError);
  EXPECT_THROW(parse_config("search.augment=yes\n"), ConfigError);
  EXPECT_THROW(parse_config("model.backbone_widths=1,2\n"), ConfigError);
  EXPECT_THROW(parse_config("search.encoder_depth=7\n"), ConfigError);
  try {
    parse_config("seed=1\n\nbogus.key=2\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("bogus.key"), std::string::npos);
  }
}

TEST(Config, SetValueOverrides) {
  ExperimentConfig c;
  set_config_value(c, "pretrain.epochs", "20");
  set_config_value(c, "model.backbone_widths", "8, 16, 32");
  EXPECT_EQ(c.pretrain.opt.epochs, 20);
  EXPECT_EQ(c.model.backbone_widths, (std::array<std::size_t, 3>{8, 16, 32}));
  EXPECT_THROW(set_config_value(c, "pretrain.epoch", "20"), ConfigError);
}

TEST(Config, FileRoundTrip) {
  const fs::path dir = scratch("config");
  std::mt19937_64 rng(2);
  const ExperimentConfig c = random_config(rng);
  save_config(c, dir / "run.cfg");
  EXPECT_EQ(load_config(dir / "run.cfg"), c);
  EXPECT_THROW(load_config(dir / "missing.cfg"), IoError);
}

TEST(Config, DecimalValue) {
  EXPECT_EQ(decimal_value(0.06f), 0.06);
  EXPECT_EQ(decimal_value(0.5f), 0.5);
  EXPECT_EQ(decimal_value(3e-4f), 3e-4);
}

// ---- checkpoint ----

namespace {

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_str(std::vector<std::uint8_t>& b, const std::string& s) {
  put_u32(b, static_cast<std::uint32_t>(s.size()));
  b.insert(b.end(), s.begin(), s.end());
}
void put_f32(std::vector<std::uint8_t>& b, float f) {
  std::uint32_t u = 0;
  std::memcpy(&u, &f, 4);
  put_u32(b, u);
}

}  // namespace

TEST(Checkpoint, ByteLayoutOracle) {
  Checkpoint ck;
  ck.meta["kind"] = "pretrain";
  ck.add("w", {2, 1}, {1.5f, -2.0f});
  ck.add("b", {1}, {0.25f});

  std::vector<std::uint8_t> want{'H', 'S', 'C', 'K', 'P', 'T', '0', '1'};
  put_u32(want, 1);
  put_u32(want, 1);
  put_u32(want, 2);
  put_str(want, "kind");
  put_str(want, "pretrain");
  put_str(want, "w");
  put_u32(want, 2);
  put_u64(want, 2);
  put_u64(want, 1);
  put_str(want, "b");
  put_u32(want, 1);
  put_u64(want, 1);
  for (float f : {1.5f, -2.0f, 0.25f}) put_f32(want, f);

  EXPECT_EQ(encode_checkpoint(ck), want);
  EXPECT_EQ(decode_checkpoint(want), ck);
}

TEST(Checkpoint, RoundTripProperty) {
  std::mt19937_64 rng(3);
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (int s = 0; s < 50; ++s) {
    Checkpoint ck;
    ck.meta["epoch"] = std::to_string(rng() % 100);
    const std::size_t count = 1 + rng() % 5;
    for (std::size_t t = 0; t < count; ++t) {
      Shape shape;
      for (std::size_t r = 0, rank = 1 + rng() % 4; r < rank; ++r) shape.push_back(1 + rng() % 4);
      std::vector<float> v(shape_numel(shape));
      for (float& x : v) x = n(rng);
      ck.add("t" + std::to_string(t), shape, v);
    }
    EXPECT_EQ(decode_checkpoint(encode_checkpoint(ck)), ck);
  }
}

TEST(Checkpoint, Errors) {
  Checkpoint ck;
  ck.add("w", {2}, {1.0f, 2.0f});
  auto bytes = encode_checkpoint(ck);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[8] = 2;
  EXPECT_THROW(decode_checkpoint(bad_version), FormatError);
  EXPECT_THROW(decode_checkpoint({bytes.begin(), bytes.end() - 1}), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_checkpoint(trailing), FormatError);

  EXPECT_THROW(ck.add("w", {1}, {0.0f}), FormatError);
  EXPECT_THROW(ck.add("v", {3}, {0.0f}), ShapeError);
  EXPECT_THROW(ck.get("missing"), FormatError);
  EXPECT_THROW(ck.meta_value("epoch"), FormatError);
  Tensor wrong = Tensor::zeros({3});
  EXPECT_THROW(ck.load_into("w", wrong), ShapeError);
  Tensor right = Tensor::zeros({2});
  ck.load_into("w", right);
  EXPECT_EQ(right.at(1), 2.0f);
}

TEST(Checkpoint, FileRoundTrip) {
  const fs::path dir = scratch("ckpt");
  Checkpoint ck;
  ck.meta["genotype"] = "{}";
  ck.add("x", Tensor::from_values({2, 2}, {1, 2, 3, 4}));
  save_checkpoint(ck, dir / "a.ckpt");
  EXPECT_EQ(load_checkpoint(dir / "a.ckpt"), ck);
  EXPECT_THROW(load_checkpoint(dir / "none.ckpt"), IoError);
}

// ---- metrics ----

TEST(Metrics, OrderingRules) {
  MetricsLog log;
  log.append({"search", 0, 0.5, 0.06, {}, {}, 0.1});
  log.append({"search", 1, 0.4, 0.06, {}, {}, 0.2});
  EXPECT_THROW(log.append({"search", 1, 0.3, {}, {}, {}, {}}), RangeError);
  log.append({"pretrain", 0, -0.2, 0.06, {}, {}, {}});
  EXPECT_THROW(log.append({"search", 2, 0.3, {}, {}, {}, {}}), RangeError);
  EXPECT_THROW(log.append({"a,b", 0, {}, {}, {}, {}, {}}), RangeError);
  EXPECT_EQ(log.rows().size(), 3u);
}

TEST(Metrics, CsvRoundTrip) {
  MetricsLog log;
  log.append({"search", 0, 0.5, 0.06, {}, {}, 0.25});
  log.append({"probe", 0, 0.69314718, 0.3, 75.5, 99.0, {}});
  const std::string csv = log.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "phase,epoch,loss,lr,top1,top5,skip_fraction");
  EXPECT_NE(csv.find("search,0,0.5,0.06,,,0.25\n"), std::string::npos);
  ParsedMetrics p = parse_metrics_csv(csv);
  EXPECT_TRUE(p.diagnostics.empty());
  EXPECT_EQ(p.rows, log.rows());
}

TEST(Metrics, ParseDiagnostics) {
  const std::string text = std::string(kMetricsHeader) +
                           "\nsearch,0,0.5,,,,\n"
                           "search,1,abc,,,,\n"
                           "search,2,0.4\n"
                           ",3,0.1,,,,\n"
                           "search,x,0.1,,,,\n"
                           "search,5,0.3,,,,\n";
  ParsedMetrics p = parse_metrics_csv(text);
  ASSERT_EQ(p.rows.size(), 2u);
  EXPECT_EQ(p.rows[1].epoch, 5);
  ASSERT_EQ(p.diagnostics.size(), 4u);
  EXPECT_NE(p.diagnostics[0].find("line 3"), std::string::npos);
  EXPECT_NE(p.diagnostics[1].find("line 4"), std::string::npos);

  EXPECT_FALSE(parse_metrics_csv("epoch,loss\n1,2\n").diagnostics.empty());
  EXPECT_FALSE(parse_metrics_csv("").diagnostics.empty());
}
