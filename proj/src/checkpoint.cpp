#include "headsearch/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "headsearch/error.hpp"

namespace headsearch {

namespace {

constexpr char kMagic[8] = {'H', 'S', 'C', 'K', 'P', 'T', '0', '1'};

class Writer {
 public:
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void raw(const char* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint32_t u32() { return le<std::uint32_t>(); }
  std::uint64_t u64() { return le<std::uint64_t>(); }
  float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void expect_raw(const char* p, std::size_t n) {
    need(n);
    if (std::memcmp(bytes_.data() + pos_, p, n) != 0) throw FormatError("checkpoint: bad magic");
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint: truncated file");
  }
  template <typename U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void Checkpoint::add(std::string name, const Tensor& t) {
  add(std::move(name), t.shape(), std::vector<float>(t.values().begin(), t.values().end()));
}

void Checkpoint::add(std::string name, Shape shape, std::vector<float> values) {
  if (shape_numel(shape) != values.size()) throw ShapeError("checkpoint: shape does not match value count");
  for (const auto& a : arrays) {
    if (a.name == name) throw FormatError("checkpoint: duplicate array " + name);
  }
  arrays.push_back(NamedArray{std::move(name), std::move(shape), std::move(values)});
}

const NamedArray& Checkpoint::get(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return a;
  }
  throw FormatError("checkpoint: missing array " + name);
}

const std::string& Checkpoint::meta_value(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw FormatError("checkpoint: missing meta key " + key);
  return it->second;
}

void Checkpoint::load_into(const std::string& name, Tensor& t) const {
  const NamedArray& a = get(name);
  if (a.shape != t.shape()) {
    throw ShapeError("checkpoint: array " + name + " has shape " + shape_str(a.shape) + ", expected " +
                     shape_str(t.shape()));
  }
  std::copy(a.values.begin(), a.values.end(), t.values().begin());
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.meta.size()));
  w.u32(static_cast<std::uint32_t>(ckpt.arrays.size()));
  for (const auto& [k, v] : ckpt.meta) {
    w.str(k);
    w.str(v);
  }
  for (const auto& a : ckpt.arrays) {
    w.str(a.name);
    w.u32(static_cast<std::uint32_t>(a.shape.size()));
    for (std::size_t d : a.shape) w.u64(d);
  }
  for (const auto& a : ckpt.arrays) {
    for (float v : a.values) w.f32(v);
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  r.expect_raw(kMagic, sizeof kMagic);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t metas = r.u32();
  const std::uint32_t count = r.u32();
  Checkpoint ckpt;
  for (std::uint32_t i = 0; i < metas; ++i) {
    std::string k = r.str();
    ckpt.meta[k] = r.str();
  }
  std::vector<std::pair<std::string, Shape>> table;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) throw FormatError("checkpoint: bad rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) {
      d = r.u64();
      if (d == 0 || d > (std::uint64_t{1} << 32)) throw FormatError("checkpoint: bad dimension for " + name);
    }
    table.emplace_back(std::move(name), std::move(shape));
  }
  for (auto& [name, shape] : table) {
    std::vector<float> values(shape_numel(shape));
    for (float& v : values) v = r.f32();
    ckpt.arrays.push_back(NamedArray{std::move(name), std::move(shape), std::move(values)});
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace headsearch
