#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "headsearch/bilevel.hpp"
#include "headsearch/checkpoint.hpp"
#include "headsearch/config.hpp"
#include "headsearch/metrics.hpp"

namespace headsearch::pipeline {

struct DataBundle {
  data::Dataset train;  // search, pretraining and probe training
  data::Dataset test;   // probe evaluation only
};

// Synthetic data is generated from data.seed; CIFAR-10 reads the first
// train_size records of data_batch_1..5.bin and test_size of test_batch.bin.
DataBundle load_data(const ExperimentConfig& config);

struct PretrainEpoch {
  long epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
};

// Backbone + materialized heads trained with the framework loss under a
// cosine learning-rate schedule.
class Pretrainer {
 public:
  Pretrainer(const ExperimentConfig& config, const Genotype& genotype);

  PretrainEpoch run_epoch(const data::Dataset& train);
  long next_epoch() const { return epoch_; }
  bool finished() const { return epoch_ >= config_.pretrain.opt.epochs; }

  Checkpoint checkpoint();
  // Restores a state produced by checkpoint() for the same config/genotype.
  void restore(const Checkpoint& ckpt);

  TinyBackbone& backbone() { return backbone_; }
  MaterializedHeads& heads() { return heads_; }
  const Genotype& genotype() const { return genotype_; }

 private:
  std::vector<Tensor> trainable();

  ExperimentConfig config_;
  Genotype genotype_;
  TinyBackbone backbone_;
  MaterializedHeads heads_;
  optim::Sgd opt_;
  Rng rng_;
  long epoch_ = 0;
};

// Reads the backbone part of a pretraining checkpoint.
void load_backbone(TinyBackbone& backbone, const Checkpoint& ckpt);

struct ProbeResult {
  double top1 = 0.0;                 // percent
  std::optional<double> top5;        // percent; only with >= 5 classes
  std::vector<double> epoch_losses;
  std::vector<double> epoch_lrs;
};

// Frozen eval-mode backbone; a single linear layer trained with softmax
// cross-entropy on standardized features.
ProbeResult linear_probe(TinyBackbone& backbone, const data::Dataset& train, const data::Dataset& test,
                         const PhaseOptConfig& opt, std::uint64_t seed);

// Top-k accuracy in percent of row-wise logits [N x C].
double topk_accuracy(const Tensor& logits, std::span<const std::int32_t> labels, std::size_t k);

struct SearchRun {
  search::SearchResult result;
  std::filesystem::path genotype_path;
};

struct PretrainRun {
  std::vector<PretrainEpoch> epochs;
  CollapseScore collapse;
  std::filesystem::path checkpoint_path;
};

struct ProbeRun {
  ProbeResult result;
};

SearchRun cmd_search(const ExperimentConfig& config, const std::filesystem::path& out);
// Resumes from `resume` when given.
PretrainRun cmd_pretrain(const ExperimentConfig& config, const std::filesystem::path& genotype_path,
                         const std::filesystem::path& out,
                         const std::optional<std::filesystem::path>& resume = std::nullopt);
// Without a checkpoint the probe runs on a freshly initialized backbone.
ProbeRun cmd_linear_probe(const ExperimentConfig& config, const std::optional<std::filesystem::path>& checkpoint,
                          const std::filesystem::path& out);

struct AblationArm {
  std::uint64_t seed = 0;
  std::string arm;  // "S", "S_prime", "S_noaug"
  SearchSpace space = SearchSpace::S;
  bool augment = true;
  double top1 = 0.0;
  std::optional<double> top5;
  double skip_fraction = 0.0;
  bool search_collapsed = false;
  double search_tail_mean = 0.0;
  bool pretrain_collapsed = false;
};

// For each of ablate.seeds seeds: three searches (S, S', S without
// augmentation), each followed by pretrain + probe. Writes ablation.csv.
std::vector<AblationArm> cmd_ablate(const ExperimentConfig& config, const std::filesystem::path& out);

struct ReportSummary {
  std::vector<std::string> run_names;
  std::vector<std::string> diagnostics;
  std::vector<std::filesystem::path> files;
};

// summary.csv plus loss_curves.svg and (when any run logs it) skip_fraction.svg.
ReportSummary cmd_report(const std::vector<std::filesystem::path>& metrics_paths, const std::filesystem::path& out);

}  // namespace headsearch::pipeline
