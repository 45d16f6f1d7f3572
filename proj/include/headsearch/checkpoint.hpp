#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "headsearch/tensor.hpp"

namespace headsearch {

// Binary container:
//   magic "HSCKPT01" | u32 version | u32 meta count | u32 tensor count
//   meta:   (u32 len, key bytes, u32 len, value bytes) per entry
//   shapes: (u32 len, name bytes, u32 rank, u64 dim * rank) per tensor
//   data:   f32 values of every tensor, in table order
// All integers and floats are little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;

  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<NamedArray> arrays;

  void add(std::string name, const Tensor& t);
  void add(std::string name, Shape shape, std::vector<float> values);
  // Throws FormatError when missing.
  const NamedArray& get(const std::string& name) const;
  const std::string& meta_value(const std::string& key) const;
  // Copies the named array into `t`, checking the shape.
  void load_into(const std::string& name, Tensor& t) const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
// Throws FormatError on bad magic, unsupported version or truncation.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace headsearch
