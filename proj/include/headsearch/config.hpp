#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "headsearch/bilevel.hpp"

namespace headsearch {

enum class DatasetKind { Synthetic, Cifar10 };

struct DataConfig {
  DatasetKind dataset = DatasetKind::Synthetic;
  std::string path;               // directory holding data_batch_*.bin / test_batch.bin
  std::uint64_t seed = 0;
  std::size_t train_size = 2000;  // images used for search, pretraining and probe training
  std::size_t test_size = 500;    // held-out images for probe evaluation
  std::size_t classes = 2;        // synthetic only
  std::size_t image_size = 32;    // synthetic only

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct ModelConfig {
  std::array<std::size_t, 3> backbone_widths{32, 64, 128};
  std::size_t hidden = 128;
  std::size_t output = 64;
  std::size_t predictor_hidden = 64;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct PhaseOptConfig {
  long epochs = 20;
  std::size_t batch_size = 64;
  float lr = 0.06f;
  float lr_min = 0.0f;
  float weight_decay = 5e-4f;
  float momentum = 0.9f;

  friend bool operator==(const PhaseOptConfig&, const PhaseOptConfig&) = default;
};

struct SearchSection {
  SearchSpace space = SearchSpace::S;
  long epochs = 20;
  std::size_t batch_size = 64;
  std::size_t encoder_depth = 6;
  std::size_t predictor_depth = 4;
  float lr = 0.06f;
  float weight_decay = 5e-4f;
  float momentum = 0.9f;
  float arch_lr = 3e-4f;
  float arch_weight_decay = 1e-3f;
  bool augment = true;
  double split_ratio = 0.5;

  friend bool operator==(const SearchSection&, const SearchSection&) = default;
};

struct PretrainSection {
  PhaseOptConfig opt{40, 64, 0.06f, 0.0f, 5e-4f, 0.9f};
  bool augment = true;

  friend bool operator==(const PretrainSection&, const PretrainSection&) = default;
};

struct ProbeSection {
  PhaseOptConfig opt{30, 64, 0.3f, 0.0f, 5e-4f, 0.9f};

  friend bool operator==(const ProbeSection&, const ProbeSection&) = default;
};

// View augmentation shared by search and pretraining (when enabled there).
struct AugmentSection {
  float crop_min = 0.2f;
  float flip = 0.5f;
  float jitter = 0.8f;
  float brightness = 0.4f;
  float contrast = 0.4f;
  float grayscale = 0.2f;

  friend bool operator==(const AugmentSection&, const AugmentSection&) = default;
};

struct AblateSection {
  std::size_t seeds = 3;

  friend bool operator==(const AblateSection&, const AblateSection&) = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string out = "runs/default";
  DataConfig data;
  FrameworkKind framework = FrameworkKind::SimSiamLike;
  float temperature = 0.5f;
  ModelConfig model;
  AugmentSection augment;
  SearchSection search;
  PretrainSection pretrain;
  ProbeSection probe;
  AblateSection ablate;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;

  // Throws ConfigError on values outside their documented ranges.
  void validate() const;

  Framework framework_spec() const { return Framework{framework, temperature}; }
  HeadDims head_dims() const;
  BackboneConfig backbone_config() const;
  search::SearchConfig search_config() const;
  // The enabled policy built from the augment section.
  data::AugmentPolicy augment_policy() const;
};

// All recognised keys, in serialization order.
const std::vector<std::string>& config_keys();

// `key=value` lines; '#' starts a comment; blank lines ignored. Unknown keys,
// duplicate keys and malformed values raise ConfigError naming the line.
ExperimentConfig parse_config(std::string_view text);
std::string serialize_config(const ExperimentConfig& config);

// Applies one override on top of an existing config.
void set_config_value(ExperimentConfig& config, std::string_view key, std::string_view value);

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& config, const std::filesystem::path& path);

std::string_view dataset_name(DatasetKind kind);

// Widens a float through its shortest decimal form, so 0.06f logs as 0.06
// rather than 0.0599999987.
double decimal_value(float v);

}  // namespace headsearch
