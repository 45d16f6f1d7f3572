#include "headsearch/supernet.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "headsearch/error.hpp"
#include "headsearch/rng.hpp"
#include "headsearch/tape.hpp"

namespace headsearch {

std::size_t max_depth(CellRole role) { return role == CellRole::Encoder ? kMaxEncoderDepth : kMaxPredictorDepth; }

MixedLayer::MixedLayer(std::vector<LayerBlock> blocks, Tensor alpha) : blocks_(std::move(blocks)), alpha_(std::move(alpha)) {
  if (blocks_.empty() || alpha_.rank() != 1 || alpha_.dim(0) != blocks_.size()) {
    throw ShapeError("mixed layer: alpha length must equal the number of candidate blocks");
  }
  for (const LayerBlock& b : blocks_) {
    if (b.dim_in() != blocks_.front().dim_in() || b.dim_out() != blocks_.front().dim_out()) {
      throw ShapeError("mixed layer: candidate blocks disagree on dimensions");
    }
  }
}

Tensor MixedLayer::forward(const Tensor& x, Mode mode) {
  std::vector<Tensor> outs;
  outs.reserve(blocks_.size());
  for (LayerBlock& b : blocks_) outs.push_back(b.forward(x, mode));
  return ops::weighted_sum(outs, ops::softmax(alpha_));
}

std::vector<Tensor> MixedLayer::parameters() {
  std::vector<Tensor> out;
  for (LayerBlock& b : blocks_) {
    auto p = b.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<Tensor> MixedLayer::buffers() {
  std::vector<Tensor> out;
  for (LayerBlock& b : blocks_) {
    auto p = b.buffers();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<float> MixedLayer::op_weights() const {
  NoGradGuard guard;
  const Tensor w = ops::softmax(alpha_);
  return {w.values().begin(), w.values().end()};
}

Tensor mixed_forward(MixedLayer& layer, const Tensor& x, Mode mode) { return layer.forward(x, mode); }

MixedCell::MixedCell(CellRole role, SearchSpace space, CellDims dims, std::vector<MixedLayer> layers)
    : role_(role), space_(space), dims_(dims), layers_(std::move(layers)) {}

Tensor MixedCell::forward(const Tensor& x, Mode mode) {
  Tensor y = x;
  for (MixedLayer& l : layers_) y = l.forward(y, mode);
  return y;
}

std::vector<Tensor> MixedCell::parameters() {
  std::vector<Tensor> out;
  for (MixedLayer& l : layers_) {
    auto p = l.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<Tensor> MixedCell::buffers() {
  std::vector<Tensor> out;
  for (MixedLayer& l : layers_) {
    auto p = l.buffers();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<Tensor> MixedCell::arch_parameters() {
  std::vector<Tensor> out;
  for (MixedLayer& l : layers_) out.push_back(l.alpha());
  return out;
}

MixedCell build_cell(CellRole role, std::size_t depth, CellDims dims, SearchSpace space, std::uint64_t seed) {
  const char* name = role == CellRole::Encoder ? "encoder" : "predictor";
  if (depth == 0 || depth > max_depth(role)) {
    throw ConfigError(std::string(name) + " cell depth " + std::to_string(depth) + " outside [1, " +
                      std::to_string(max_depth(role)) + "]");
  }
  if (dims.input == 0 || dims.hidden == 0 || dims.output == 0) throw ConfigError("cell dimensions must be positive");
  const std::uint64_t role_seed = derive_seed(seed, role == CellRole::Encoder ? 101 : 202);
  Rng noise = make_rng(role_seed, 7);
  std::normal_distribution<float> jitter(0.0f, 1e-3f);
  auto kinds = catalog(space);
  std::vector<MixedLayer> layers;
  for (std::size_t i = 0; i < depth; ++i) {
    const bool final_predictor = role == CellRole::Predictor && i + 1 == depth;
    std::vector<LayerBlock> blocks;
    for (OperationKind k : kinds) {
      blocks.push_back(instantiate_adapted_block(k, dims.layer_in(i), dims.layer_out(i, depth), final_predictor,
                                                 derive_seed(role_seed, i)));
    }
    std::vector<float> alpha(kinds.size());
    for (float& a : alpha) a = jitter(noise);
    layers.emplace_back(std::move(blocks), Tensor::from_values({kinds.size()}, std::move(alpha), true));
  }
  return MixedCell(role, space, dims, std::move(layers));
}

Tensor cell_forward(MixedCell& cell, const Tensor& x, Mode mode) { return cell.forward(x, mode); }

namespace {

std::vector<OperationKind> argmax_ops(const MixedCell& cell) {
  auto kinds = catalog(cell.space());
  std::vector<OperationKind> out;
  for (const MixedLayer& layer : cell.layers()) {
    auto a = layer.alpha().values();
    std::size_t best = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      if (std::isnan(a[k])) throw NumericError("corrupted search: NaN architecture weight");
      if (a[k] > a[best]) best = k;
    }
    out.push_back(kinds[best]);
  }
  return out;
}

}  // namespace

Genotype parse_genotype(const MixedCell& encoder, const MixedCell* predictor, std::uint64_t seed, long search_epochs) {
  Genotype g;
  g.encoder = argmax_ops(encoder);
  if (predictor) {
    if (predictor->space() != encoder.space()) throw ConfigError("encoder and predictor searched in different spaces");
    g.predictor = argmax_ops(*predictor);
  }
  g.space = encoder.space();
  g.seed = seed;
  g.search_epochs = search_epochs;
  return g;
}

double skip_fraction(const Genotype& g) {
  std::size_t total = g.encoder.size(), skips = 0;
  for (OperationKind k : g.encoder) skips += k == OperationKind::Identity;
  if (g.predictor) {
    total += g.predictor->size();
    for (OperationKind k : *g.predictor) skips += k == OperationKind::Identity;
  }
  return total == 0 ? 0.0 : static_cast<double>(skips) / static_cast<double>(total);
}

void validate_genotype(const Genotype& g) {
  if (g.encoder.empty() || g.encoder.size() > kMaxEncoderDepth) {
    throw FormatError("genotype encoder length " + std::to_string(g.encoder.size()) + " outside [1, 6]");
  }
  if (g.predictor && (g.predictor->empty() || g.predictor->size() > kMaxPredictorDepth)) {
    throw FormatError("genotype predictor length " + std::to_string(g.predictor->size()) + " outside [1, 4]");
  }
  auto check = [&](const std::vector<OperationKind>& ops) {
    for (OperationKind k : ops) {
      if (!in_space(k, g.space)) {
        throw FormatError("genotype entry " + std::string(kind_name(k)) + " not in space " +
                          std::string(space_name(g.space)));
      }
    }
  };
  check(g.encoder);
  if (g.predictor) check(*g.predictor);
}

std::string genotype_to_json(const Genotype& g) {
  nlohmann::ordered_json j;
  auto names = [](const std::vector<OperationKind>& ops) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (OperationKind k : ops) arr.push_back(std::string(kind_name(k)));
    return arr;
  };
  j["encoder"] = names(g.encoder);
  j["predictor"] = g.predictor ? names(*g.predictor) : nlohmann::ordered_json(nullptr);
  j["space"] = std::string(space_name(g.space));
  j["seed"] = g.seed;
  j["search_epochs"] = g.search_epochs;
  return j.dump(2) + "\n";
}

Genotype genotype_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("genotype: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("genotype: expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (key != "encoder" && key != "predictor" && key != "space" && key != "seed" && key != "search_epochs") {
      throw FormatError("genotype: unknown field '" + key + "'");
    }
  }
  for (const char* key : {"encoder", "predictor", "space", "seed", "search_epochs"}) {
    if (!j.contains(key)) throw FormatError(std::string("genotype: missing field '") + key + "'");
  }
  auto kinds = [](const nlohmann::json& arr) {
    if (!arr.is_array()) throw FormatError("genotype: operation list must be an array");
    std::vector<OperationKind> out;
    for (const auto& e : arr) {
      if (!e.is_string()) throw FormatError("genotype: operation names must be strings");
      out.push_back(kind_from_name(e.get<std::string>()));
    }
    return out;
  };
  Genotype g;
  try {
    g.encoder = kinds(j["encoder"]);
    if (!j["predictor"].is_null()) g.predictor = kinds(j["predictor"]);
    g.space = space_from_name(j["space"].get<std::string>());
    g.seed = j["seed"].get<std::uint64_t>();
    g.search_epochs = j["search_epochs"].get<long>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("genotype: ") + e.what());
  }
  validate_genotype(g);
  return g;
}

void save_genotype(const Genotype& g, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write genotype file " + path.string());
  out << genotype_to_json(g);
}

Genotype load_genotype(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read genotype file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return genotype_from_json(ss.str());
}

Head::Head(std::vector<OperationKind> ops, std::vector<LayerBlock> blocks)
    : ops_(std::move(ops)), blocks_(std::move(blocks)) {}

Tensor Head::forward(const Tensor& x, Mode mode) {
  Tensor y = x;
  for (LayerBlock& b : blocks_) y = b.forward(y, mode);
  return y;
}

std::vector<Tensor> Head::parameters() {
  std::vector<Tensor> out;
  for (LayerBlock& b : blocks_) {
    auto p = b.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<Tensor> Head::buffers() {
  std::vector<Tensor> out;
  for (LayerBlock& b : blocks_) {
    auto p = b.buffers();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::size_t Head::effective_depth() const {
  std::size_t n = 0;
  for (OperationKind k : ops_) n += k != OperationKind::Identity;
  return n;
}

namespace {

Head materialize_cell(const std::vector<OperationKind>& ops, CellRole role, const CellDims& dims, std::uint64_t seed) {
  std::vector<LayerBlock> blocks;
  const std::size_t depth = ops.size();
  for (std::size_t i = 0; i < depth; ++i) {
    const std::size_t din = dims.layer_in(i), dout = dims.layer_out(i, depth);
    if (ops[i] == OperationKind::Identity && din == dout) continue;
    const bool final_predictor = role == CellRole::Predictor && i + 1 == depth;
    blocks.push_back(instantiate_adapted_block(ops[i], din, dout, final_predictor, derive_seed(seed, i)));
  }
  return Head(ops, std::move(blocks));
}

}  // namespace

MaterializedHeads materialize(const Genotype& g, const HeadDims& dims, std::uint64_t seed) {
  validate_genotype(g);
  if (dims.feature == 0 || dims.hidden == 0 || dims.output == 0 || dims.predictor_hidden == 0) {
    throw ConfigError("materialize: head dimensions must be positive");
  }
  MaterializedHeads heads{materialize_cell(g.encoder, CellRole::Encoder, dims.encoder(), derive_seed(seed, 101)),
                          std::nullopt};
  if (g.predictor) {
    heads.predictor = materialize_cell(*g.predictor, CellRole::Predictor, dims.predictor(), derive_seed(seed, 202));
  }
  return heads;
}

}  // namespace headsearch
