#pragma once

#include <array>
#include <span>
#include <utility>
#include <vector>

#include "headsearch/rng.hpp"

namespace headsearch::data {

// Two-view augmentation: random resized crop, horizontal flip, per-channel
// brightness/contrast jitter, random grayscale, then per-channel
// normalization. A disabled policy only normalizes.
struct AugmentPolicy {
  bool enabled = true;
  float crop_scale_min = 0.2f;
  float crop_scale_max = 1.0f;
  float flip_prob = 0.5f;
  float jitter_prob = 0.8f;
  float brightness = 0.4f;
  float contrast = 0.4f;
  float grayscale_prob = 0.2f;
  std::array<float, 3> mean{0.4914f, 0.4822f, 0.4465f};
  std::array<float, 3> stddev{0.2470f, 0.2435f, 0.2616f};

  static AugmentPolicy disabled();
  // Only the flip is random; every other transform is off.
  static AugmentPolicy flip_only(float prob);
};

std::vector<float> normalize_image(std::span<const float> image, const AugmentPolicy& policy);

// One random view of a C x S x S image in [0, 1].
std::vector<float> augment_view(std::span<const float> image, std::size_t size, const AugmentPolicy& policy, Rng& rng);

std::pair<std::vector<float>, std::vector<float>> augment_pair(std::span<const float> image, std::size_t size,
                                                               const AugmentPolicy& policy, Rng& rng);

}  // namespace headsearch::data
