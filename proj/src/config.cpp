#include "headsearch/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "headsearch/error.hpp"

namespace headsearch {

double decimal_value(float v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  double out = 0.0;
  std::from_chars(buf, res.ptr, out);
  return out;
}

std::string_view dataset_name(DatasetKind kind) { return kind == DatasetKind::Cifar10 ? "cifar10" : "synthetic"; }

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ConfigError("bad value '" + std::string(text) + "' for key " + std::string(key));
  }
  return value;
}

template <typename T>
std::string format_number(T value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError("bad value '" + std::string(text) + "' for key " + std::string(key) + " (expected true|false)");
}

struct Entry {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, std::string_view)> set;
};

// `access` is a generic lambda returning the field of a (const) config.
template <typename T, typename Access>
Entry number_entry(std::string key, Access access) {
  return Entry{key, [access](const ExperimentConfig& c) { return format_number(access(c)); },
               [access, key](ExperimentConfig& c, std::string_view v) { access(c) = parse_number<T>(key, v); }};
}

template <typename Access>
Entry bool_entry(std::string key, Access access) {
  return Entry{key, [access](const ExperimentConfig& c) {
                 return std::string(access(c) ? "true" : "false");
               },
               [access, key](ExperimentConfig& c, std::string_view v) { access(c) = parse_bool(key, v); }};
}

template <typename Access>
Entry string_entry(std::string key, Access access) {
  return Entry{key, [access](const ExperimentConfig& c) { return access(c); },
               [access](ExperimentConfig& c, std::string_view v) { access(c) = std::string(v); }};
}

template <typename Access>
std::vector<Entry> phase_entries(const std::string& prefix, Access phase) {
  return {
      number_entry<long>(prefix + ".epochs", [phase](auto& c) -> auto& { return phase(c).epochs; }),
      number_entry<std::size_t>(prefix + ".batch_size",
                                [phase](auto& c) -> auto& { return phase(c).batch_size; }),
      number_entry<float>(prefix + ".lr", [phase](auto& c) -> auto& { return phase(c).lr; }),
      number_entry<float>(prefix + ".lr_min", [phase](auto& c) -> auto& { return phase(c).lr_min; }),
      number_entry<float>(prefix + ".weight_decay",
                          [phase](auto& c) -> auto& { return phase(c).weight_decay; }),
      number_entry<float>(prefix + ".momentum", [phase](auto& c) -> auto& { return phase(c).momentum; }),
  };
}

std::vector<Entry> build_table() {
  using C = ExperimentConfig;
  std::vector<Entry> t;
  t.push_back(number_entry<std::uint64_t>("seed", [](auto& c) -> auto& { return c.seed; }));
  t.push_back(string_entry("out", [](auto& c) -> auto& { return c.out; }));

  t.push_back(Entry{"data.dataset", [](const C& c) { return std::string(dataset_name(c.data.dataset)); },
                    [](C& c, std::string_view v) {
                      if (v == "synthetic") {
                        c.data.dataset = DatasetKind::Synthetic;
                      } else if (v == "cifar10") {
                        c.data.dataset = DatasetKind::Cifar10;
                      } else {
                        throw ConfigError("bad value '" + std::string(v) + "' for key data.dataset");
                      }
                    }});
  t.push_back(string_entry("data.path", [](auto& c) -> auto& { return c.data.path; }));
  t.push_back(number_entry<std::uint64_t>("data.seed", [](auto& c) -> auto& { return c.data.seed; }));
  t.push_back(number_entry<std::size_t>("data.train_size", [](auto& c) -> auto& { return c.data.train_size; }));
  t.push_back(number_entry<std::size_t>("data.test_size", [](auto& c) -> auto& { return c.data.test_size; }));
  t.push_back(number_entry<std::size_t>("data.classes", [](auto& c) -> auto& { return c.data.classes; }));
  t.push_back(number_entry<std::size_t>("data.image_size", [](auto& c) -> auto& { return c.data.image_size; }));

  t.push_back(Entry{"framework.kind", [](const C& c) { return std::string(framework_name(c.framework)); },
                    [](C& c, std::string_view v) {
                      try {
                        c.framework = framework_from_name(v);
                      } catch (const Error&) {
                        throw ConfigError("bad value '" + std::string(v) + "' for key framework.kind");
                      }
                    }});
  t.push_back(number_entry<float>("framework.temperature", [](auto& c) -> auto& { return c.temperature; }));

  t.push_back(Entry{"model.backbone_widths",
                    [](const C& c) {
                      const auto& w = c.model.backbone_widths;
                      return format_number(w[0]) + "," + format_number(w[1]) + "," + format_number(w[2]);
                    },
                    [](C& c, std::string_view v) {
                      std::array<std::size_t, 3> w{};
                      std::size_t i = 0;
                      while (true) {
                        const auto comma = v.find(',');
                        if (i >= 3) throw ConfigError("model.backbone_widths takes exactly 3 values");
                        w[i++] = parse_number<std::size_t>("model.backbone_widths", trim(v.substr(0, comma)));
                        if (comma == std::string_view::npos) break;
                        v.remove_prefix(comma + 1);
                      }
                      if (i != 3) throw ConfigError("model.backbone_widths takes exactly 3 values");
                      c.model.backbone_widths = w;
                    }});
  t.push_back(number_entry<std::size_t>("model.hidden", [](auto& c) -> auto& { return c.model.hidden; }));
  t.push_back(number_entry<std::size_t>("model.output", [](auto& c) -> auto& { return c.model.output; }));
  t.push_back(number_entry<std::size_t>("model.predictor_hidden",
                                        [](auto& c) -> auto& { return c.model.predictor_hidden; }));

  t.push_back(number_entry<float>("augment.crop_min", [](auto& c) -> auto& { return c.augment.crop_min; }));
  t.push_back(number_entry<float>("augment.flip", [](auto& c) -> auto& { return c.augment.flip; }));
  t.push_back(number_entry<float>("augment.jitter", [](auto& c) -> auto& { return c.augment.jitter; }));
  t.push_back(number_entry<float>("augment.brightness", [](auto& c) -> auto& { return c.augment.brightness; }));
  t.push_back(number_entry<float>("augment.contrast", [](auto& c) -> auto& { return c.augment.contrast; }));
  t.push_back(number_entry<float>("augment.grayscale", [](auto& c) -> auto& { return c.augment.grayscale; }));

  t.push_back(Entry{"search.space", [](const C& c) { return std::string(space_name(c.search.space)); },
                    [](C& c, std::string_view v) {
                      try {
                        c.search.space = space_from_name(v);
                      } catch (const Error&) {
                        throw ConfigError("bad value '" + std::string(v) + "' for key search.space");
                      }
                    }});
  t.push_back(number_entry<long>("search.epochs", [](auto& c) -> auto& { return c.search.epochs; }));
  t.push_back(number_entry<std::size_t>("search.batch_size", [](auto& c) -> auto& { return c.search.batch_size; }));
  t.push_back(
      number_entry<std::size_t>("search.encoder_depth", [](auto& c) -> auto& { return c.search.encoder_depth; }));
  t.push_back(number_entry<std::size_t>("search.predictor_depth",
                                        [](auto& c) -> auto& { return c.search.predictor_depth; }));
  t.push_back(number_entry<float>("search.lr", [](auto& c) -> auto& { return c.search.lr; }));
  t.push_back(number_entry<float>("search.weight_decay", [](auto& c) -> auto& { return c.search.weight_decay; }));
  t.push_back(number_entry<float>("search.momentum", [](auto& c) -> auto& { return c.search.momentum; }));
  t.push_back(number_entry<float>("search.arch_lr", [](auto& c) -> auto& { return c.search.arch_lr; }));
  t.push_back(
      number_entry<float>("search.arch_weight_decay", [](auto& c) -> auto& { return c.search.arch_weight_decay; }));
  t.push_back(bool_entry("search.augment", [](auto& c) -> auto& { return c.search.augment; }));
  t.push_back(number_entry<double>("search.split_ratio", [](auto& c) -> auto& { return c.search.split_ratio; }));

  for (auto& e : phase_entries("pretrain", [](auto& c) -> auto& { return c.pretrain.opt; })) t.push_back(e);
  t.push_back(bool_entry("pretrain.augment", [](auto& c) -> auto& { return c.pretrain.augment; }));
  for (auto& e : phase_entries("probe", [](auto& c) -> auto& { return c.probe.opt; })) t.push_back(e);
  t.push_back(number_entry<std::size_t>("ablate.seeds", [](auto& c) -> auto& { return c.ablate.seeds; }));
  return t;
}

const std::vector<Entry>& table() {
  static const std::vector<Entry> t = build_table();
  return t;
}

const Entry& find_entry(std::string_view key) {
  for (const Entry& e : table()) {
    if (e.key == key) return e;
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void check_phase(const PhaseOptConfig& p, const char* name) {
  if (p.epochs < 1) throw ConfigError(std::string(name) + ".epochs must be >= 1");
  if (p.batch_size < 2) throw ConfigError(std::string(name) + ".batch_size must be >= 2");
  if (!(p.lr >= 0.0f) || !(p.lr_min >= 0.0f) || p.lr_min > p.lr) {
    throw ConfigError(std::string(name) + ": need 0 <= lr_min <= lr");
  }
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const Entry& e : table()) k.push_back(e.key);
    return k;
  }();
  return keys;
}

void set_config_value(ExperimentConfig& config, std::string_view key, std::string_view value) {
  find_entry(key).set(config, value);
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig config;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(line_no) + ": ";
    if (eq == std::string_view::npos) throw ConfigError(where + "expected key=value");
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    if (!seen.insert(std::string(key)).second) throw ConfigError(where + "duplicate key '" + std::string(key) + "'");
    try {
      set_config_value(config, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  config.validate();
  return config;
}

std::string serialize_config(const ExperimentConfig& config) {
  std::string out;
  for (const Entry& e : table()) out += e.key + "=" + e.get(config) + "\n";
  return out;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void save_config(const ExperimentConfig& config, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config " + path.string());
  out << serialize_config(config);
}

void ExperimentConfig::validate() const {
  if (data.train_size < 4) throw ConfigError("data.train_size must be >= 4");
  if (data.dataset == DatasetKind::Synthetic) {
    if (data.classes < 2) throw ConfigError("data.classes must be >= 2");
    if (data.image_size < 8) throw ConfigError("data.image_size must be >= 8");
  }
  if (!(temperature > 0.0f)) throw ConfigError("framework.temperature must be > 0");
  for (std::size_t w : model.backbone_widths) {
    if (w == 0) throw ConfigError("model.backbone_widths must be positive");
  }
  if (model.hidden == 0 || model.output == 0 || model.predictor_hidden == 0) {
    throw ConfigError("model widths must be positive");
  }
  auto unit = [](float v) { return v >= 0.0f && v <= 1.0f; };
  if (!unit(augment.crop_min) || augment.crop_min == 0.0f) throw ConfigError("augment.crop_min must lie in (0, 1]");
  if (!unit(augment.flip) || !unit(augment.jitter) || !unit(augment.grayscale)) {
    throw ConfigError("augment probabilities must lie in [0, 1]");
  }
  if (!(augment.brightness >= 0.0f) || !(augment.contrast >= 0.0f) || augment.contrast > 1.0f) {
    throw ConfigError("augment.brightness must be >= 0 and augment.contrast in [0, 1]");
  }
  check_phase(pretrain.opt, "pretrain");
  check_phase(probe.opt, "probe");
  if (ablate.seeds < 1) throw ConfigError("ablate.seeds must be >= 1");
  search_config().validate();
}

HeadDims ExperimentConfig::head_dims() const {
  return HeadDims{model.backbone_widths[2], model.hidden, model.output, model.predictor_hidden};
}

BackboneConfig ExperimentConfig::backbone_config() const { return BackboneConfig{model.backbone_widths}; }

search::SearchConfig ExperimentConfig::search_config() const {
  search::SearchConfig s;
  s.epochs = search.epochs;
  s.batch_size = search.batch_size;
  s.model_opt = {search.lr, search.weight_decay, search.momentum};
  s.arch_opt.lr = search.arch_lr;
  s.arch_opt.weight_decay = search.arch_weight_decay;
  s.space = search.space;
  s.seed = seed;
  s.augment = search.augment;
  s.encoder_depth = search.encoder_depth;
  s.predictor_depth = search.predictor_depth;
  s.framework = framework_spec();
  s.dims = head_dims();
  s.backbone = backbone_config();
  s.split_ratio = search.split_ratio;
  s.policy = augment_policy();
  return s;
}

data::AugmentPolicy ExperimentConfig::augment_policy() const {
  data::AugmentPolicy p;
  p.crop_scale_min = augment.crop_min;
  p.flip_prob = augment.flip;
  p.jitter_prob = augment.jitter;
  p.brightness = augment.brightness;
  p.contrast = augment.contrast;
  p.grayscale_prob = augment.grayscale;
  return p;
}

}  // namespace headsearch
