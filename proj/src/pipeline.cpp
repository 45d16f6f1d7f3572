#include "headsearch/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "headsearch/error.hpp"
#include "headsearch/tape.hpp"

namespace headsearch::pipeline {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

void write_json(const ordered_json& j, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

void append_dataset(data::Dataset& dst, const data::Dataset& src, std::size_t count) {
  const std::size_t take = std::min(count, src.length());
  dst.size = src.size;
  dst.num_classes = src.num_classes;
  dst.pixels.insert(dst.pixels.end(), src.pixels.begin(),
                    src.pixels.begin() + static_cast<std::ptrdiff_t>(take * src.image_numel()));
  dst.labels.insert(dst.labels.end(), src.labels.begin(), src.labels.begin() + static_cast<std::ptrdiff_t>(take));
}

Tensor rows_tensor(const std::vector<float>& features, std::size_t dim, std::span<const std::size_t> rows) {
  std::vector<float> v;
  v.reserve(rows.size() * dim);
  for (std::size_t r : rows) {
    v.insert(v.end(), features.begin() + static_cast<std::ptrdiff_t>(r * dim),
             features.begin() + static_cast<std::ptrdiff_t>((r + 1) * dim));
  }
  return Tensor::from_values({rows.size(), dim}, std::move(v));
}

// Eval-mode backbone features of every image, row-major [N x d].
std::vector<float> extract_features(TinyBackbone& backbone, const data::Dataset& ds) {
  const auto policy = data::AugmentPolicy::disabled();
  const std::size_t d = backbone.feature_dim();
  std::vector<float> out;
  out.reserve(ds.length() * d);
  NoGradGuard no_grad;
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < ds.length(); start += kChunk) {
    std::vector<std::vector<float>> imgs;
    for (std::size_t i = start; i < std::min(ds.length(), start + kChunk); ++i) {
      imgs.push_back(data::normalize_image(ds.image(i), policy));
    }
    Tensor f = backbone.forward(data::stack_images(imgs, ds.size), Mode::Eval);
    out.insert(out.end(), f.values().begin(), f.values().end());
  }
  return out;
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

void check_genotype_against(const ExperimentConfig& config, const Genotype& g) {
  validate_genotype(g);
  if (g.space != config.search.space) {
    throw ConfigError("genotype was searched in space " + std::string(space_name(g.space)) +
                      " but the config selects " + std::string(space_name(config.search.space)));
  }
  if (g.predictor.has_value() != config.framework_spec().uses_predictor()) {
    throw ConfigError("genotype predictor presence does not match framework " +
                      std::string(framework_name(config.framework)));
  }
}

}  // namespace

DataBundle load_data(const ExperimentConfig& config) {
  const DataConfig& dc = config.data;
  DataBundle b;
  if (dc.dataset == DatasetKind::Synthetic) {
    data::Dataset all = data::synth_dataset(dc.seed, dc.train_size + dc.test_size, dc.classes, dc.image_size);
    const auto idx = iota_indices(all.length());
    std::span<const std::size_t> s(idx);
    b.train = all.subset(s.first(dc.train_size));
    b.test = all.subset(s.subspan(dc.train_size));
    return b;
  }
  const fs::path root(dc.path);
  for (int i = 1; i <= 5 && b.train.length() < dc.train_size; ++i) {
    const fs::path file = root / ("data_batch_" + std::to_string(i) + ".bin");
    append_dataset(b.train, data::load_cifar10_bin(file), dc.train_size - b.train.length());
  }
  append_dataset(b.test, data::load_cifar10_bin(root / "test_batch.bin"), dc.test_size);
  if (b.train.length() < dc.train_size) throw IoError("CIFAR-10 files hold fewer than data.train_size images");
  return b;
}

Pretrainer::Pretrainer(const ExperimentConfig& config, const Genotype& genotype)
    : config_(config),
      genotype_(genotype),
      backbone_(config.backbone_config(), derive_seed(config.seed, 1)),
      heads_(materialize(genotype, config.head_dims(), derive_seed(config.seed, 5))),
      opt_(trainable(), config.pretrain.opt.lr, config.pretrain.opt.momentum, config.pretrain.opt.weight_decay),
      rng_(make_rng(config.seed, 0x9e7)) {
  check_genotype_against(config, genotype);
}

std::vector<Tensor> Pretrainer::trainable() {
  std::vector<Tensor> out = backbone_.parameters();
  auto e = heads_.encoder.parameters();
  out.insert(out.end(), e.begin(), e.end());
  if (heads_.predictor) {
    auto p = heads_.predictor->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

PretrainEpoch Pretrainer::run_epoch(const data::Dataset& train) {
  const PhaseOptConfig& o = config_.pretrain.opt;
  if (finished()) throw RangeError("pretraining already ran all configured epochs");
  const double lr = optim::cosine_lr(epoch_, o.epochs, decimal_value(o.lr), decimal_value(o.lr_min));
  opt_.set_lr(static_cast<float>(lr));
  const auto policy = config_.pretrain.augment ? config_.augment_policy() : data::AugmentPolicy::disabled();
  const Framework fw = config_.framework_spec();

  auto order = iota_indices(train.length());
  std::shuffle(order.begin(), order.end(), rng_);
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& batch : data::make_batches(order, o.batch_size)) {
    std::vector<std::vector<float>> v1, v2;
    for (std::size_t i : batch) {
      auto [a, b] = data::augment_pair(train.image(i), train.size, policy, rng_);
      v1.push_back(std::move(a));
      v2.push_back(std::move(b));
    }
    const Tensor x1 = data::stack_images(v1, train.size), x2 = data::stack_images(v2, train.size);
    {
      Tape tape;
      Head* pred = heads_.predictor ? &*heads_.predictor : nullptr;
      Tensor loss = framework_loss(fw, siamese_forward(backbone_, heads_.encoder, pred, x1, x2, Mode::Train));
      if (!std::isfinite(loss.item())) {
        throw NumericError("pretraining diverged at epoch " + std::to_string(epoch_));
      }
      total += loss.item();
      ++count;
      tape.backward(loss);
    }
    opt_.step();
    opt_.zero_grad();
  }
  PretrainEpoch rec{epoch_, count ? total / static_cast<double>(count) : 0.0, lr};
  ++epoch_;
  return rec;
}

namespace {

void add_module(Checkpoint& ckpt, const std::string& prefix, Module& m) {
  auto params = m.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) ckpt.add(prefix + ".param." + std::to_string(i), params[i]);
  auto bufs = m.buffers();
  for (std::size_t i = 0; i < bufs.size(); ++i) ckpt.add(prefix + ".buffer." + std::to_string(i), bufs[i]);
}

void load_module(const Checkpoint& ckpt, const std::string& prefix, Module& m) {
  auto params = m.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) ckpt.load_into(prefix + ".param." + std::to_string(i), params[i]);
  auto bufs = m.buffers();
  for (std::size_t i = 0; i < bufs.size(); ++i) ckpt.load_into(prefix + ".buffer." + std::to_string(i), bufs[i]);
}

}  // namespace

Checkpoint Pretrainer::checkpoint() {
  Checkpoint ckpt;
  ckpt.meta["kind"] = "pretrain";
  ckpt.meta["genotype"] = genotype_to_json(genotype_);
  ckpt.meta["epoch"] = std::to_string(epoch_);
  ckpt.meta["seed"] = std::to_string(config_.seed);
  std::ostringstream rng_state;
  rng_state << rng_;
  ckpt.meta["rng"] = rng_state.str();
  add_module(ckpt, "backbone", backbone_);
  add_module(ckpt, "encoder", heads_.encoder);
  if (heads_.predictor) add_module(ckpt, "predictor", *heads_.predictor);
  const auto params = trainable();
  const auto& bufs = opt_.state().momentum_buffers;
  for (std::size_t i = 0; i < bufs.size(); ++i) ckpt.add("opt.momentum." + std::to_string(i), params[i].shape(), bufs[i]);
  return ckpt;
}

void Pretrainer::restore(const Checkpoint& ckpt) {
  if (ckpt.meta_value("kind") != "pretrain") throw FormatError("checkpoint is not a pretraining checkpoint");
  if (genotype_from_json(ckpt.meta_value("genotype")) != genotype_) {
    throw FormatError("checkpoint genotype differs from the requested genotype");
  }
  load_module(ckpt, "backbone", backbone_);
  load_module(ckpt, "encoder", heads_.encoder);
  if (heads_.predictor) load_module(ckpt, "predictor", *heads_.predictor);
  const auto params = trainable();
  auto& bufs = opt_.state().momentum_buffers;
  bufs.assign(params.size(), {});
  for (std::size_t i = 0; i < params.size(); ++i) {
    const NamedArray& a = ckpt.get("opt.momentum." + std::to_string(i));
    if (a.shape != params[i].shape()) throw ShapeError("checkpoint: momentum buffer shape mismatch");
    bufs[i] = a.values;
  }
  std::istringstream rng_state(ckpt.meta_value("rng"));
  rng_state >> rng_;
  if (!rng_state) throw FormatError("checkpoint: unreadable rng state");
  epoch_ = std::stol(ckpt.meta_value("epoch"));
}

void load_backbone(TinyBackbone& backbone, const Checkpoint& ckpt) { load_module(ckpt, "backbone", backbone); }

double topk_accuracy(const Tensor& logits, std::span<const std::int32_t> labels, std::size_t k) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) throw ShapeError("topk_accuracy: label count does not match logits");
  if (n == 0) return 0.0;
  const auto v = logits.values();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    const float target = v[i * c + y];
    std::size_t rank = 0;  // entries ranked ahead of the label, ties to the lower index
    for (std::size_t j = 0; j < c; ++j) {
      const float l = v[i * c + j];
      if (l > target || (l == target && j < y)) ++rank;
    }
    if (rank < k) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(n);
}

ProbeResult linear_probe(TinyBackbone& backbone, const data::Dataset& train, const data::Dataset& test,
                         const PhaseOptConfig& opt, std::uint64_t seed) {
  const std::size_t classes = train.num_classes;
  if (classes < 2) throw ConfigError("linear probe needs at least 2 classes");
  if (!train.labeled() || !test.labeled()) throw ConfigError("linear probe needs labeled data");
  const std::size_t d = backbone.feature_dim();

  std::vector<float> ftrain = extract_features(backbone, train);
  std::vector<float> ftest = extract_features(backbone, test);
  const std::size_t n = train.length();
  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mu[j] += ftrain[i * d + j];
  for (double& m : mu) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) sd[j] += (ftrain[i * d + j] - mu[j]) * (ftrain[i * d + j] - mu[j]);
  for (double& s : sd) {
    s = std::sqrt(s / static_cast<double>(n));
    if (s < 1e-6) s = 1.0;
  }
  auto standardize = [&](std::vector<float>& f) {
    for (std::size_t i = 0; i < f.size() / d; ++i)
      for (std::size_t j = 0; j < d; ++j) f[i * d + j] = static_cast<float>((f[i * d + j] - mu[j]) / sd[j]);
  };
  standardize(ftrain);
  standardize(ftest);

  Tensor weight = Tensor::zeros({d, classes}, true);
  Tensor bias = Tensor::zeros({classes}, true);
  optim::Sgd sgd({weight, bias}, opt.lr, opt.momentum, opt.weight_decay);
  Rng rng = make_rng(seed, 0x9b0e);

  ProbeResult result;
  auto order = iota_indices(n);
  for (long e = 0; e < opt.epochs; ++e) {
    const double lr = optim::cosine_lr(e, opt.epochs, decimal_value(opt.lr), decimal_value(opt.lr_min));
    sgd.set_lr(static_cast<float>(lr));
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& batch : data::make_batches(order, opt.batch_size)) {
      std::vector<std::int32_t> y;
      for (std::size_t i : batch) y.push_back(train.labels[i]);
      {
        Tape tape;
        Tensor loss = ops::cross_entropy(ops::linear(rows_tensor(ftrain, d, batch), weight, bias), y);
        total += loss.item();
        ++count;
        tape.backward(loss);
      }
      sgd.step();
      sgd.zero_grad();
    }
    result.epoch_losses.push_back(count ? total / static_cast<double>(count) : 0.0);
    result.epoch_lrs.push_back(lr);
  }

  NoGradGuard no_grad;
  const Tensor logits = ops::linear(rows_tensor(ftest, d, iota_indices(test.length())), weight, bias);
  result.top1 = topk_accuracy(logits, test.labels, 1);
  if (classes >= 5) result.top5 = topk_accuracy(logits, test.labels, 5);
  return result;
}

SearchRun cmd_search(const ExperimentConfig& config, const fs::path& out) {
  config.validate();
  const DataBundle data = load_data(config);
  SearchRun run;
  run.result = search::run_search(config.search_config(), data.train);
  fs::create_directories(out);
  save_config(config, out / "config.cfg");
  run.genotype_path = out / "genotype.json";
  save_genotype(run.result.genotype, run.genotype_path);
  search::write_search_log(run.result.log, out / "search_log");

  MetricsLog metrics;
  for (const auto& r : run.result.log.records) {
    metrics.append(MetricsRow{"search", r.epoch, r.train_loss, decimal_value(config.search.lr), std::nullopt, std::nullopt,
                              r.skip_fraction});
  }
  metrics.write(out / "metrics.csv");

  ordered_json summary;
  summary["collapsed"] = run.result.collapse.collapsed;
  summary["tail_mean"] = run.result.collapse.mean_tail;
  summary["skip_fraction"] = skip_fraction(run.result.genotype);
  write_json(summary, out / "search_summary.json");
  return run;
}

PretrainRun cmd_pretrain(const ExperimentConfig& config, const fs::path& genotype_path, const fs::path& out,
                         const std::optional<fs::path>& resume) {
  config.validate();
  const Genotype genotype = load_genotype(genotype_path);
  check_genotype_against(config, genotype);
  const DataBundle data = load_data(config);
  Pretrainer trainer(config, genotype);

  PretrainRun run;
  MetricsLog metrics;
  if (resume) {
    trainer.restore(load_checkpoint(*resume));
    if (fs::exists(out / "metrics.csv")) {
      for (const auto& row : read_metrics(out / "metrics.csv").rows) {
        if (row.phase == "pretrain" && row.epoch < trainer.next_epoch()) {
          metrics.append(row);
          run.epochs.push_back(PretrainEpoch{row.epoch, row.loss.value_or(0.0), row.lr.value_or(0.0)});
        }
      }
    }
  }
  fs::create_directories(out);
  save_config(config, out / "config.cfg");
  while (!trainer.finished()) {
    const PretrainEpoch e = trainer.run_epoch(data.train);
    run.epochs.push_back(e);
    metrics.append(MetricsRow{"pretrain", e.epoch, e.loss, e.lr, std::nullopt, std::nullopt, std::nullopt});
  }
  metrics.write(out / "metrics.csv");
  run.checkpoint_path = out / "checkpoint.bin";
  save_checkpoint(trainer.checkpoint(), run.checkpoint_path);

  std::vector<double> losses;
  for (const auto& e : run.epochs) losses.push_back(e.loss);
  run.collapse = collapse_score(losses, std::min(kCollapseWindow, losses.size()));
  ordered_json summary;
  summary["collapsed"] = run.collapse.collapsed;
  summary["tail_mean"] = run.collapse.mean_tail;
  summary["final_loss"] = losses.empty() ? 0.0 : losses.back();
  write_json(summary, out / "pretrain_summary.json");
  return run;
}

ProbeRun cmd_linear_probe(const ExperimentConfig& config, const std::optional<fs::path>& checkpoint,
                          const fs::path& out) {
  config.validate();
  const DataBundle data = load_data(config);
  TinyBackbone backbone(config.backbone_config(), derive_seed(config.seed, 1));
  if (checkpoint) load_backbone(backbone, load_checkpoint(*checkpoint));

  ProbeRun run;
  run.result = linear_probe(backbone, data.train, data.test, config.probe.opt, config.seed);
  MetricsLog metrics;
  for (std::size_t e = 0; e < run.result.epoch_losses.size(); ++e) {
    metrics.append(MetricsRow{"probe", static_cast<long>(e), run.result.epoch_losses[e], run.result.epoch_lrs[e],
                              std::nullopt, std::nullopt, std::nullopt});
  }
  metrics.append(MetricsRow{"eval", config.probe.opt.epochs, std::nullopt, std::nullopt, run.result.top1,
                            run.result.top5, std::nullopt});
  fs::create_directories(out);
  save_config(config, out / "config.cfg");
  metrics.write(out / "metrics.csv");

  ordered_json summary;
  summary["checkpoint"] = checkpoint ? ordered_json(checkpoint->string()) : ordered_json(nullptr);
  summary["top1"] = run.result.top1;
  summary["top5"] = run.result.top5 ? ordered_json(*run.result.top5) : ordered_json(nullptr);
  write_json(summary, out / "probe.json");
  return run;
}

std::vector<AblationArm> cmd_ablate(const ExperimentConfig& config, const fs::path& out) {
  config.validate();
  struct ArmSpec {
    const char* name;
    SearchSpace space;
    bool augment;
  };
  const ArmSpec specs[] = {{"S", SearchSpace::S, true}, {"S_prime", SearchSpace::SPrime, true},
                           {"S_noaug", SearchSpace::S, false}};

  std::vector<AblationArm> arms;
  for (std::size_t s = 0; s < config.ablate.seeds; ++s) {
    for (const ArmSpec& spec : specs) {
      ExperimentConfig c = config;
      c.seed = config.seed + s;
      c.search.space = spec.space;
      c.search.augment = spec.augment;
      const fs::path dir = out / ("seed_" + std::to_string(c.seed)) / spec.name;
      c.out = dir.string();

      const SearchRun sr = cmd_search(c, dir / "search");
      const PretrainRun pr = cmd_pretrain(c, sr.genotype_path, dir / "pretrain");
      const ProbeRun probe = cmd_linear_probe(c, pr.checkpoint_path, dir / "probe");

      AblationArm arm;
      arm.seed = c.seed;
      arm.arm = spec.name;
      arm.space = spec.space;
      arm.augment = spec.augment;
      arm.top1 = probe.result.top1;
      arm.top5 = probe.result.top5;
      arm.skip_fraction = skip_fraction(sr.result.genotype);
      arm.search_collapsed = sr.result.collapse.collapsed;
      arm.search_tail_mean = sr.result.collapse.mean_tail;
      arm.pretrain_collapsed = pr.collapse.collapsed;
      arms.push_back(arm);
    }
  }

  fs::create_directories(out);
  std::ofstream csv(out / "ablation.csv");
  if (!csv) throw IoError("cannot write ablation.csv");
  csv << "seed,arm,space,augment,top1,top5,skip_fraction,search_collapsed,search_tail_mean,pretrain_collapsed\n";
  char buf[256];
  for (const auto& a : arms) {
    std::string top5 = a.top5 ? std::to_string(*a.top5) : "";
    std::snprintf(buf, sizeof buf, "%llu,%s,%s,%s,%.4f,%s,%.4f,%d,%.6f,%d\n", static_cast<unsigned long long>(a.seed),
                  a.arm.c_str(), std::string(space_name(a.space)).c_str(), a.augment ? "true" : "false", a.top1,
                  top5.c_str(), a.skip_fraction, a.search_collapsed ? 1 : 0, a.search_tail_mean,
                  a.pretrain_collapsed ? 1 : 0);
    csv << buf;
  }
  return arms;
}

}  // namespace headsearch::pipeline
