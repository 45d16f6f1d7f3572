#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "headsearch/rng.hpp"
#include "headsearch/tensor.hpp"

namespace headsearch::data {

// N square RGB images stored channel-major (C x H x W per image), values in
// [0, 1], with optional integer labels.
struct Dataset {
  std::size_t size = 0;  // H == W
  std::size_t num_classes = 0;
  std::vector<float> pixels;
  std::vector<std::int32_t> labels;

  static constexpr std::size_t kChannels = 3;

  std::size_t image_numel() const { return kChannels * size * size; }
  std::size_t length() const { return size == 0 ? 0 : pixels.size() / image_numel(); }
  bool labeled() const { return !labels.empty(); }
  std::span<const float> image(std::size_t i) const;
  Dataset subset(std::span<const std::size_t> indices) const;
};

inline constexpr std::size_t kCifarRecordBytes = 3073;

// CIFAR-10 binary batch: records of 1 label byte + 3072 pixel bytes
// (R, G, B planes of 32 x 32).
Dataset load_cifar10_bin(const std::filesystem::path& path);
Dataset parse_cifar10_bin(std::span<const std::uint8_t> bytes);

// Half-width of the per-image hue draw around a class's base hue. Wide on
// purpose: colour stays a weak cue and the shape carries most of the label.
inline constexpr float kHueSpread = 0.45f;

// Class-conditional colored shapes: class c draws a shape (disk, plus,
// triangle, square, cycling) filled with a hue near c / num_classes on a
// random plain background; position, scale, saturation, value and pixel
// noise vary per image. Classes are balanced and the result is a pure
// function of the arguments.
Dataset synth_dataset(std::uint64_t seed, std::size_t n, std::size_t num_classes, std::size_t size);

// Seeded shuffle; the first ceil(ratio * N) items go to the first split.
std::pair<Dataset, Dataset> split_train_val(const Dataset& dataset, double ratio, std::uint64_t seed);

// Visiting order for one epoch, a pure function of (n, seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch);

// Contiguous batches over `order`; a trailing batch smaller than 2 is dropped.
std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> order, std::size_t batch_size);

// Stacks the selected images (already transformed) into [B x 3 x S x S].
Tensor stack_images(const std::vector<std::vector<float>>& images, std::size_t size);

}  // namespace headsearch::data
