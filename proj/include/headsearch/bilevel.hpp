#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "headsearch/augment.hpp"
#include "headsearch/backbone.hpp"
#include "headsearch/data.hpp"
#include "headsearch/error.hpp"
#include "headsearch/optim.hpp"
#include "headsearch/siamese.hpp"
#include "headsearch/supernet.hpp"

namespace headsearch::search {

struct ModelOptConfig {
  float lr = 0.06f;
  float weight_decay = 5e-4f;
  float momentum = 0.9f;

  friend bool operator==(const ModelOptConfig&, const ModelOptConfig&) = default;
};

struct ArchOptConfig {
  float lr = 3e-4f;
  float weight_decay = 1e-3f;
  float beta1 = 0.5f;
  float beta2 = 0.999f;

  friend bool operator==(const ArchOptConfig&, const ArchOptConfig&) = default;
};

struct SearchConfig {
  long epochs = 20;
  std::size_t batch_size = 64;
  ModelOptConfig model_opt;
  ArchOptConfig arch_opt;
  SearchSpace space = SearchSpace::S;
  std::uint64_t seed = 0;
  bool augment = true;
  data::AugmentPolicy policy;
  std::size_t encoder_depth = kMaxEncoderDepth;
  std::size_t predictor_depth = kMaxPredictorDepth;
  Framework framework;
  HeadDims dims;
  BackboneConfig backbone;
  double split_ratio = 0.5;  // share of the data used for weight steps

  void validate() const;
};

// Backbone plus searchable encoder cell and (for predictor frameworks) the
// predictor cell. Model weights w are every backbone and block parameter;
// architecture weights are the per-layer alphas.
class Supernet {
 public:
  explicit Supernet(const SearchConfig& config);

  SiameseOutputs forward(const Tensor& x1, const Tensor& x2, Mode mode);

  std::vector<Tensor> model_parameters();
  std::vector<Tensor> arch_parameters();
  std::vector<Tensor> buffers();

  TinyBackbone& backbone() { return backbone_; }
  MixedCell& encoder() { return encoder_; }
  MixedCell* predictor() { return predictor_ ? &*predictor_ : nullptr; }

 private:
  TinyBackbone backbone_;
  MixedCell encoder_;
  std::optional<MixedCell> predictor_;
};

struct SearchOptimizers {
  optim::Sgd model;
  optim::Adam arch;

  static SearchOptimizers create(Supernet& net, const SearchConfig& config);
};

enum class StepKind { Arch, Model };

// Bitwise copy of both parameter groups.
struct ParameterSnapshot {
  std::vector<std::vector<float>> weights;
  std::vector<std::vector<float>> alphas;
};

ParameterSnapshot snapshot_parameters(Supernet& net);

// True iff an arch step left every model weight bitwise unchanged, or a model
// step left every alpha bitwise unchanged.
bool grad_channels_disjoint_check(const ParameterSnapshot& before, const ParameterSnapshot& after, StepKind step);

struct EpochRecord {
  long epoch = 0;
  double val_loss = 0.0;    // mean loss of the architecture pass
  double train_loss = 0.0;  // mean loss of the weight pass
  std::vector<std::vector<float>> encoder_op_weights;
  std::vector<std::vector<float>> predictor_op_weights;
  Genotype genotype;
  double skip_fraction = 0.0;
  std::optional<bool> partition_held;  // set when auditing
};

struct SearchLog {
  std::vector<EpochRecord> records;

  std::vector<double> train_losses() const;
  std::vector<double> val_losses() const;
};

// Raised when a loss turns NaN; carries the state at the time of failure.
class SearchAborted : public NumericError {
 public:
  SearchAborted(const std::string& what, std::vector<std::vector<float>> alphas, std::vector<double> batch_losses)
      : NumericError(what), alphas_(std::move(alphas)), batch_losses_(std::move(batch_losses)) {}

  const std::vector<std::vector<float>>& alphas() const { return alphas_; }
  const std::vector<double>& batch_losses() const { return batch_losses_; }

 private:
  std::vector<std::vector<float>> alphas_;
  std::vector<double> batch_losses_;
};

struct EpochContext {
  Framework framework;
  data::AugmentPolicy policy;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  long epoch = 0;
  bool audit_partition = false;
};

// One alternation: a full pass over `val` stepping only the alphas, then a
// full pass over `train` stepping only the model weights.
EpochRecord search_epoch(Supernet& net, const data::Dataset& val, const data::Dataset& train, SearchOptimizers& opt,
                         const EpochContext& ctx);

struct SearchResult {
  Genotype genotype;
  SearchLog log;
  CollapseScore collapse;  // over the weight-pass losses
};

// Splits `dataset` into weight/arch halves and runs config.epochs alternations.
SearchResult run_search(const SearchConfig& config, const data::Dataset& dataset, bool audit_partition = false);

// search_log.csv (epoch,phase,loss,skip_fraction) plus alphas/epoch_NNN.json.
void write_search_log(const SearchLog& log, const std::filesystem::path& dir);

}  // namespace headsearch::search
