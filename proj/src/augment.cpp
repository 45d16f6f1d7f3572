#include "headsearch/augment.hpp"

#include <algorithm>
#include <cmath>

namespace headsearch::data {

AugmentPolicy AugmentPolicy::disabled() {
  AugmentPolicy p;
  p.enabled = false;
  return p;
}

AugmentPolicy AugmentPolicy::flip_only(float prob) {
  AugmentPolicy p;
  p.crop_scale_min = 1.0f;
  p.crop_scale_max = 1.0f;
  p.flip_prob = prob;
  p.jitter_prob = 0.0f;
  p.grayscale_prob = 0.0f;
  return p;
}

std::vector<float> normalize_image(std::span<const float> image, const AugmentPolicy& policy) {
  const std::size_t plane = image.size() / 3;
  std::vector<float> out(image.begin(), image.end());
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      out[c * plane + i] = (out[c * plane + i] - policy.mean[c]) / policy.stddev[c];
    }
  }
  return out;
}

namespace {

// Crop window (top, left, height, width) in pixels.
struct Window {
  std::size_t top, left, h, w;
};

Window sample_crop(std::size_t size, const AugmentPolicy& p, Rng& rng) {
  const double area = static_cast<double>(size * size);
  std::uniform_real_distribution<double> scale(p.crop_scale_min, p.crop_scale_max);
  std::uniform_real_distribution<double> log_ratio(std::log(3.0 / 4.0), std::log(4.0 / 3.0));
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * scale(rng);
    const double ratio = std::exp(log_ratio(rng));
    const auto w = static_cast<std::size_t>(std::lround(std::sqrt(target * ratio)));
    const auto h = static_cast<std::size_t>(std::lround(std::sqrt(target / ratio)));
    if (w == 0 || h == 0 || w > size || h > size) continue;
    std::uniform_int_distribution<std::size_t> top(0, size - h), left(0, size - w);
    const std::size_t t = top(rng);
    return {t, left(rng), h, w};
  }
  return {0, 0, size, size};
}

// Bilinear resample of the window back to size x size.
std::vector<float> resize_crop(std::span<const float> img, std::size_t size, const Window& win) {
  if (win.h == size && win.w == size) return {img.begin(), img.end()};
  std::vector<float> out(img.size());
  const std::size_t plane = size * size;
  const double sy = static_cast<double>(win.h) / static_cast<double>(size);
  const double sx = static_cast<double>(win.w) / static_cast<double>(size);
  for (std::size_t y = 0; y < size; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(win.h - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, win.h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < size; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(win.w - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, win.w - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        auto at = [&](std::size_t yy, std::size_t xx) {
          return static_cast<double>(img[c * plane + (win.top + yy) * size + win.left + xx]);
        };
        const double v = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) + wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
        out[c * plane + y * size + x] = static_cast<float>(v);
      }
    }
  }
  return out;
}

}  // namespace

std::vector<float> augment_view(std::span<const float> image, std::size_t size, const AugmentPolicy& policy, Rng& rng) {
  if (!policy.enabled) return normalize_image(image, policy);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> img = resize_crop(image, size, sample_crop(size, policy, rng));
  const std::size_t plane = size * size;

  if (u(rng) < policy.flip_prob) {
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = 0; y < size; ++y) {
        float* row = img.data() + c * plane + y * size;
        std::reverse(row, row + size);
      }
    }
  }

  if (u(rng) < policy.jitter_prob) {
    for (std::size_t c = 0; c < 3; ++c) {
      const float gain = 1.0f + policy.contrast * (2.0f * u(rng) - 1.0f);
      const float shift = policy.brightness * (2.0f * u(rng) - 1.0f) * 0.5f;
      float* ch = img.data() + c * plane;
      double m = 0.0;
      for (std::size_t i = 0; i < plane; ++i) m += ch[i];
      const auto mean = static_cast<float>(m / static_cast<double>(plane));
      for (std::size_t i = 0; i < plane; ++i) ch[i] = std::clamp((ch[i] - mean) * gain + mean + shift, 0.0f, 1.0f);
    }
  }

  if (u(rng) < policy.grayscale_prob) {
    for (std::size_t i = 0; i < plane; ++i) {
      const float g = 0.299f * img[i] + 0.587f * img[plane + i] + 0.114f * img[2 * plane + i];
      img[i] = img[plane + i] = img[2 * plane + i] = g;
    }
  }
  return normalize_image(img, policy);
}

std::pair<std::vector<float>, std::vector<float>> augment_pair(std::span<const float> image, std::size_t size,
                                                               const AugmentPolicy& policy, Rng& rng) {
  auto first = augment_view(image, size, policy, rng);
  auto second = augment_view(image, size, policy, rng);
  return {std::move(first), std::move(second)};
}

}  // namespace headsearch::data
