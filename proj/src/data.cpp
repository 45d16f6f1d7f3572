#include "headsearch/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string>

#include "headsearch/error.hpp"

namespace headsearch::data {

std::span<const float> Dataset::image(std::size_t i) const {
  if (i >= length()) throw RangeError("dataset index " + std::to_string(i) + " out of range");
  return std::span<const float>(pixels).subspan(i * image_numel(), image_numel());
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.size = size;
  out.num_classes = num_classes;
  out.pixels.reserve(indices.size() * image_numel());
  for (std::size_t i : indices) {
    auto img = image(i);
    out.pixels.insert(out.pixels.end(), img.begin(), img.end());
    if (labeled()) out.labels.push_back(labels[i]);
  }
  return out;
}

Dataset parse_cifar10_bin(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % kCifarRecordBytes != 0) {
    throw FormatError("CIFAR-10 file size " + std::to_string(bytes.size()) + " is not a multiple of 3073");
  }
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  Dataset ds;
  ds.size = 32;
  ds.num_classes = 10;
  ds.pixels.resize(n * ds.image_numel());
  ds.labels.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] > 9) {
      throw FormatError("CIFAR-10 record " + std::to_string(r) + " has label byte " + std::to_string(rec[0]));
    }
    ds.labels[r] = rec[0];
    float* dst = ds.pixels.data() + r * ds.image_numel();
    for (std::size_t i = 0; i < ds.image_numel(); ++i) dst[i] = static_cast<float>(rec[1 + i]) / 255.0f;
  }
  return ds;
}

Dataset load_cifar10_bin(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open CIFAR-10 file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_cifar10_bin(bytes);
}

namespace {

struct Rgb {
  float r, g, b;
};

Rgb hsv_to_rgb(float h, float s, float v) {
  h = h - std::floor(h);
  const float k[3] = {5.0f, 3.0f, 1.0f};
  float out[3];
  for (int i = 0; i < 3; ++i) {
    const float kk = std::fmod(k[i] + h * 6.0f, 6.0f);
    out[i] = v - v * s * std::max(0.0f, std::min({kk, 4.0f - kk, 1.0f}));
  }
  return {out[0], out[1], out[2]};
}

// Inside test for the class shape at normalized offset (dx, dy) from
// the center, radius 1. Disk and plus come first so a 2-class set gets the
// most dissimilar pair.
bool inside_shape(std::size_t shape, float dx, float dy) {
  switch (shape % 4) {
    case 0: return dx * dx + dy * dy <= 1.0f;  // disk
    case 1:                                     // plus
      return (std::abs(dx) <= 0.3f || std::abs(dy) <= 0.3f) && std::abs(dx) <= 1.0f && std::abs(dy) <= 1.0f;
    case 2: return dy <= 0.8f && dy >= -0.9f && std::abs(dx) <= (0.8f - dy) * 0.6f;  // triangle
    default: return std::abs(dx) <= 0.8f && std::abs(dy) <= 0.8f;                     // square
  }
}

}  // namespace

Dataset synth_dataset(std::uint64_t seed, std::size_t n, std::size_t num_classes, std::size_t size) {
  if (num_classes < 1 || n < num_classes) throw ConfigError("synth_dataset: need n >= classes >= 1");
  if (size < 8) throw ConfigError("synth_dataset: image size must be >= 8");
  Dataset ds;
  ds.size = size;
  ds.num_classes = num_classes;
  ds.pixels.resize(n * ds.image_numel());
  ds.labels.resize(n);

  std::vector<std::int32_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<std::int32_t>(i % num_classes);
  Rng order_rng = make_rng(seed, 0);
  std::shuffle(labels.begin(), labels.end(), order_rng);

  const float s = static_cast<float>(size);
  const std::size_t plane = size * size;
  for (std::size_t i = 0; i < n; ++i) {
    const std::int32_t c = labels[i];
    ds.labels[i] = c;
    Rng rng = make_rng(seed, i + 1);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::normal_distribution<float> noise(0.0f, 0.04f);

    const float base_hue = static_cast<float>(c) / static_cast<float>(num_classes);
    const Rgb bg = hsv_to_rgb(u(rng), 0.5f * u(rng), 0.2f + 0.6f * u(rng));
    const Rgb fg = hsv_to_rgb(base_hue + kHueSpread * (2.0f * u(rng) - 1.0f), 0.5f + 0.5f * u(rng),
                              0.5f + 0.5f * u(rng));
    const float cx = s * (0.35f + 0.3f * u(rng)), cy = s * (0.35f + 0.3f * u(rng));
    const float radius = s * (0.22f + 0.12f * u(rng));

    float* img = ds.pixels.data() + i * ds.image_numel();
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const float fx = static_cast<float>(x) + 0.5f, fy = static_cast<float>(y) + 0.5f;
        const Rgb px = inside_shape(static_cast<std::size_t>(c), (fx - cx) / radius, (fy - cy) / radius) ? fg : bg;
        const std::size_t k = y * size + x;
        img[k] = std::clamp(px.r + noise(rng), 0.0f, 1.0f);
        img[plane + k] = std::clamp(px.g + noise(rng), 0.0f, 1.0f);
        img[2 * plane + k] = std::clamp(px.b + noise(rng), 0.0f, 1.0f);
      }
    }
  }
  return ds;
}

std::pair<Dataset, Dataset> split_train_val(const Dataset& dataset, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw RangeError("split_train_val: ratio must lie in (0, 1)");
  const std::size_t n = dataset.length();
  const auto first = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n)));
  if (first == 0 || first >= n) throw RangeError("split_train_val: one side of the split would be empty");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_rng(seed, 0x5eed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::span<const std::size_t> all(idx);
  return {dataset.subset(all.first(first)), dataset.subset(all.subspan(first))};
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_rng(seed, 0xe90c0000ULL + epoch);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> order, std::size_t batch_size) {
  if (batch_size < 2) throw ConfigError("batch size must be >= 2");
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t len = std::min(batch_size, order.size() - start);
    if (len < 2) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(start + len));
  }
  return out;
}

Tensor stack_images(const std::vector<std::vector<float>>& images, std::size_t size) {
  if (images.empty()) throw ShapeError("stack_images: empty batch");
  const std::size_t per = Dataset::kChannels * size * size;
  std::vector<float> values;
  values.reserve(images.size() * per);
  for (const auto& img : images) {
    if (img.size() != per) throw ShapeError("stack_images: image has wrong size");
    values.insert(values.end(), img.begin(), img.end());
  }
  return Tensor::from_values({images.size(), Dataset::kChannels, size, size}, std::move(values));
}

}  // namespace headsearch::data
