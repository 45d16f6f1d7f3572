#include "headsearch/bilevel.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "json.hpp"

#include "headsearch/error.hpp"
#include "headsearch/tape.hpp"

namespace headsearch::search {

void SearchConfig::validate() const {
  if (epochs < 1) throw ConfigError("search epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("search batch size must be >= 2");
  if (encoder_depth < 1 || encoder_depth > kMaxEncoderDepth) throw ConfigError("encoder depth must lie in [1, 6]");
  if (framework.uses_predictor() && (predictor_depth < 1 || predictor_depth > kMaxPredictorDepth)) {
    throw ConfigError("predictor depth must lie in [1, 4]");
  }
  if (!(model_opt.lr >= 0.0f) || !(arch_opt.lr >= 0.0f)) throw ConfigError("learning rates must be >= 0");
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ConfigError("split ratio must lie in (0, 1)");
  if (dims.feature != backbone.widths[2]) throw ConfigError("head feature width must equal the backbone output width");
}

namespace {

std::optional<MixedCell> make_predictor(const SearchConfig& c) {
  if (!c.framework.uses_predictor()) return std::nullopt;
  return build_cell(CellRole::Predictor, c.predictor_depth, c.dims.predictor(), c.space, derive_seed(c.seed, 3));
}

void set_trainable(std::vector<Tensor> params, bool flag) {
  for (Tensor& p : params) p.set_requires_grad(flag);
}

std::vector<std::vector<float>> copy_values(const std::vector<Tensor>& params) {
  std::vector<std::vector<float>> out;
  out.reserve(params.size());
  for (const Tensor& p : params) out.emplace_back(p.values().begin(), p.values().end());
  return out;
}

std::vector<std::vector<float>> op_weights(const MixedCell& cell) {
  std::vector<std::vector<float>> out;
  for (const MixedLayer& l : cell.layers()) out.push_back(l.op_weights());
  return out;
}

std::pair<Tensor, Tensor> make_views(const data::Dataset& ds, const std::vector<std::size_t>& batch,
                                     const data::AugmentPolicy& policy, Rng& rng) {
  std::vector<std::vector<float>> v1, v2;
  v1.reserve(batch.size());
  v2.reserve(batch.size());
  for (std::size_t i : batch) {
    auto [a, b] = data::augment_pair(ds.image(i), ds.size, policy, rng);
    v1.push_back(std::move(a));
    v2.push_back(std::move(b));
  }
  return {data::stack_images(v1, ds.size), data::stack_images(v2, ds.size)};
}

// Runs one pass over `ds`, stepping only the parameters of `step`.
double run_pass(Supernet& net, const data::Dataset& ds, SearchOptimizers& opt, const EpochContext& ctx, StepKind step,
                std::optional<bool>& partition_held) {
  const std::uint64_t stream = step == StepKind::Arch ? 1 : 2;
  const auto order = data::epoch_order(ds.length(), derive_seed(ctx.seed, stream), static_cast<std::uint64_t>(ctx.epoch));
  const auto batches = data::make_batches(order, ctx.batch_size);
  Rng aug_rng = make_rng(derive_seed(ctx.seed, 10 + stream), static_cast<std::uint64_t>(ctx.epoch));

  set_trainable(net.model_parameters(), step == StepKind::Model);
  set_trainable(net.arch_parameters(), step == StepKind::Arch);

  std::vector<double> losses;
  for (const auto& batch : batches) {
    auto [x1, x2] = make_views(ds, batch, ctx.policy, aug_rng);
    std::optional<ParameterSnapshot> before;
    if (ctx.audit_partition) before = snapshot_parameters(net);
    {
      Tape tape;
      Tensor loss = framework_loss(ctx.framework, net.forward(x1, x2, Mode::Train));
      const double value = loss.item();
      losses.push_back(value);
      if (!std::isfinite(value)) {
        set_trainable(net.model_parameters(), true);
        set_trainable(net.arch_parameters(), true);
        throw SearchAborted("search diverged: non-finite loss at epoch " + std::to_string(ctx.epoch),
                            copy_values(net.arch_parameters()), losses);
      }
      tape.backward(loss);
    }
    if (step == StepKind::Arch) {
      opt.arch.step();
    } else {
      opt.model.step();
    }
    opt.arch.zero_grad();
    opt.model.zero_grad();
    if (before) {
      const bool ok = grad_channels_disjoint_check(*before, snapshot_parameters(net), step);
      partition_held = partition_held.value_or(true) && ok;
    }
  }

  set_trainable(net.model_parameters(), true);
  set_trainable(net.arch_parameters(), true);
  double total = 0.0;
  for (double l : losses) total += l;
  return losses.empty() ? 0.0 : total / static_cast<double>(losses.size());
}

}  // namespace

Supernet::Supernet(const SearchConfig& c)
    : backbone_(c.backbone, derive_seed(c.seed, 1)),
      encoder_(build_cell(CellRole::Encoder, c.encoder_depth, c.dims.encoder(), c.space, derive_seed(c.seed, 2))),
      predictor_(make_predictor(c)) {
  c.validate();
}

SiameseOutputs Supernet::forward(const Tensor& x1, const Tensor& x2, Mode mode) {
  return siamese_forward(backbone_, encoder_, predictor(), x1, x2, mode);
}

std::vector<Tensor> Supernet::model_parameters() {
  std::vector<Tensor> out = backbone_.parameters();
  auto e = encoder_.parameters();
  out.insert(out.end(), e.begin(), e.end());
  if (predictor_) {
    auto p = predictor_->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<Tensor> Supernet::arch_parameters() {
  std::vector<Tensor> out = encoder_.arch_parameters();
  if (predictor_) {
    auto p = predictor_->arch_parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<Tensor> Supernet::buffers() {
  std::vector<Tensor> out = backbone_.buffers();
  auto e = encoder_.buffers();
  out.insert(out.end(), e.begin(), e.end());
  if (predictor_) {
    auto p = predictor_->buffers();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

SearchOptimizers SearchOptimizers::create(Supernet& net, const SearchConfig& c) {
  return SearchOptimizers{
      optim::Sgd(net.model_parameters(), c.model_opt.lr, c.model_opt.momentum, c.model_opt.weight_decay),
      optim::Adam(net.arch_parameters(), c.arch_opt.lr, c.arch_opt.beta1, c.arch_opt.beta2, c.arch_opt.weight_decay)};
}

ParameterSnapshot snapshot_parameters(Supernet& net) {
  return ParameterSnapshot{copy_values(net.model_parameters()), copy_values(net.arch_parameters())};
}

bool grad_channels_disjoint_check(const ParameterSnapshot& before, const ParameterSnapshot& after, StepKind step) {
  const auto& untouched_before = step == StepKind::Arch ? before.weights : before.alphas;
  const auto& untouched_after = step == StepKind::Arch ? after.weights : after.alphas;
  if (untouched_before.size() != untouched_after.size()) return false;
  for (std::size_t i = 0; i < untouched_before.size(); ++i) {
    const auto& a = untouched_before[i];
    const auto& b = untouched_after[i];
    if (a.size() != b.size()) return false;
    if (std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

std::vector<double> SearchLog::train_losses() const {
  std::vector<double> out;
  for (const auto& r : records) out.push_back(r.train_loss);
  return out;
}

std::vector<double> SearchLog::val_losses() const {
  std::vector<double> out;
  for (const auto& r : records) out.push_back(r.val_loss);
  return out;
}

EpochRecord search_epoch(Supernet& net, const data::Dataset& val, const data::Dataset& train, SearchOptimizers& opt,
                         const EpochContext& ctx) {
  EpochRecord rec;
  rec.epoch = ctx.epoch;
  std::optional<bool> held;
  rec.val_loss = run_pass(net, val, opt, ctx, StepKind::Arch, held);
  rec.train_loss = run_pass(net, train, opt, ctx, StepKind::Model, held);
  rec.partition_held = held;
  rec.encoder_op_weights = op_weights(net.encoder());
  if (net.predictor()) rec.predictor_op_weights = op_weights(*net.predictor());
  rec.genotype = parse_genotype(net.encoder(), net.predictor(), ctx.seed, ctx.epoch + 1);
  rec.skip_fraction = skip_fraction(rec.genotype);
  return rec;
}

SearchResult run_search(const SearchConfig& config, const data::Dataset& dataset, bool audit_partition) {
  config.validate();
  auto [weight_split, arch_split] = data::split_train_val(dataset, config.split_ratio, derive_seed(config.seed, 4));
  Supernet net(config);
  SearchOptimizers opt = SearchOptimizers::create(net, config);
  EpochContext ctx;
  ctx.framework = config.framework;
  ctx.policy = config.augment ? config.policy : data::AugmentPolicy::disabled();
  ctx.batch_size = config.batch_size;
  ctx.seed = config.seed;
  ctx.audit_partition = audit_partition;

  SearchResult result;
  for (long e = 0; e < config.epochs; ++e) {
    ctx.epoch = e;
    result.log.records.push_back(search_epoch(net, arch_split, weight_split, opt, ctx));
  }
  result.genotype = parse_genotype(net.encoder(), net.predictor(), config.seed, config.epochs);
  const auto losses = result.log.train_losses();
  result.collapse = collapse_score(losses, std::min<std::size_t>(kCollapseWindow, losses.size()));
  return result;
}

void write_search_log(const SearchLog& log, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "alphas");
  std::ofstream csv(dir / "search_log.csv");
  if (!csv) throw IoError("cannot write " + (dir / "search_log.csv").string());
  csv << "epoch,phase,loss,skip_fraction\n";
  char buf[128];
  for (const auto& r : log.records) {
    std::snprintf(buf, sizeof buf, "%ld,arch,%.9g,%.6g\n", r.epoch, r.val_loss, r.skip_fraction);
    csv << buf;
    std::snprintf(buf, sizeof buf, "%ld,weights,%.9g,%.6g\n", r.epoch, r.train_loss, r.skip_fraction);
    csv << buf;

    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["encoder"] = r.encoder_op_weights;
    j["predictor"] = r.predictor_op_weights.empty() ? nlohmann::ordered_json(nullptr)
                                                    : nlohmann::ordered_json(r.predictor_op_weights);
    j["genotype"] = nlohmann::ordered_json::parse(genotype_to_json(r.genotype));
    std::snprintf(buf, sizeof buf, "epoch_%03ld.json", r.epoch);
    std::ofstream js(dir / "alphas" / buf);
    if (!js) throw IoError("cannot write alpha snapshot");
    js << j.dump(2) << "\n";
  }
}

}  // namespace headsearch::search
