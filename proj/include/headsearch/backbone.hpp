#pragma once

#include <array>
#include <cstdint>

#include "headsearch/module.hpp"

namespace headsearch {

struct BackboneConfig {
  // Output channels of the three stride-2 conv stages; the last is d_feat.
  std::array<std::size_t, 3> widths{32, 64, 128};

  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

// Three 3x3/stride-2 conv + BN + ReLU stages followed by global average
// pooling: [B x 3 x S x S] -> [B x widths[2]].
class TinyBackbone : public Module {
 public:
  TinyBackbone(const BackboneConfig& config, std::uint64_t seed);

  Tensor forward(const Tensor& x, Mode mode) override;
  std::vector<Tensor> parameters() override;
  std::vector<Tensor> buffers() override;

  std::size_t feature_dim() const { return config_.widths[2]; }
  std::size_t parameter_count();
  const BackboneConfig& config() const { return config_; }

 private:
  struct Stage {
    Tensor weight, bias, gamma, beta;
    ops::RunningStats stats;
  };

  BackboneConfig config_;
  std::array<Stage, 3> stages_;
};

Tensor backbone_forward(TinyBackbone& backbone, const Tensor& x, Mode mode);

}  // namespace headsearch
