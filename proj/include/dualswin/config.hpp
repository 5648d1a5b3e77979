#pragma once

// Hyperparameters for the model, the training run and the data pipeline.
//
// File format: UTF-8 text, one `key = value` per line, `#` starts a comment.
// Lists are written `[a, b, c]`, tuples `(a, b)`. Keys not present keep their
// defaults; unknown keys are rejected.

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "dualswin/errors.hpp"

namespace dualswin {

enum class SkipFusion { concatenate, additive };
enum class Augmentation { hflip, intensity_jitter };

struct ModelConfig {
  int img_size = 224;
  int patch_size = 4;
  int in_channels = 1;
  int embed_dim = 96;
  std::vector<int> encoder_depths{2, 2, 2};
  int bottleneck_depth = 2;
  std::vector<int> decoder_depths{2, 2, 2};
  std::vector<int> num_heads{3, 6, 12, 24};
  int window_size = 7;
  double mlp_ratio = 4.0;
  double drop_rate = 0.0;
  int skip_connection_count = 6;
  SkipFusion skip_fusion_mode = SkipFusion::concatenate;
  bool dual_decoder = true;
  /// Decoder 2 also concatenates the encoder skip (3C fusion); false keeps
  /// only the decoder-1 feature (2C fusion).
  bool ptmc_encoder_skip = true;
  bool relative_position_bias = true;

  int num_stages() const { return static_cast<int>(encoder_depths.size()); }
  int grid_size() const { return img_size / patch_size; }
  int stage_channels(int stage) const { return embed_dim << stage; }
  int stage_resolution(int stage) const { return grid_size() >> stage; }
  int max_skip_connections() const { return 2 * num_stages(); }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct TrainConfig {
  int batch_size = 32;
  int epochs = 300;
  int warmup_epochs = 20;
  double base_lr = 3e-4;
  int decay_epochs = 30;
  double decay_rate = 0.1;
  double weight_decay = 0.05;
  double clip_grad = 5.0;
  std::array<double, 2> betas{0.9, 0.999};
  double adam_eps = 1e-8;
  double alpha = 0.5;
  double beta = 0.5;
  std::uint64_t seed = 0;
  double threshold = 0.5;
  /// Off by default: smoothing the targets changes what the BCE term measures.
  double label_smoothing = 0.0;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct DataConfig {
  std::string dataset_root;
  std::array<double, 3> split_fractions{0.8, 0.1, 0.1};
  bool synthetic = false;
  int synthetic_count = 200;
  std::vector<Augmentation> augmentation;  // empty means none

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct Config {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;

  friend bool operator==(const Config&, const Config&) = default;
};

/// Resolution and width of one stage.
struct StageShape {
  int height;
  int width;
  int channels;
  friend bool operator==(const StageShape&, const StageShape&) = default;
};

struct StageTable {
  std::vector<StageShape> encoder;  // shallow → deep
  StageShape bottleneck;
  std::vector<StageShape> decoder;  // in execution order, deep → shallow
  StageShape output;                // per decoder head
};

// ---------------------------------------------------------------------------
// validation

/// Per-stage shapes implied by the config; throws ValidationError when a stage
/// resolution is not divisible by the window size.
inline StageTable validate_shapes(const ModelConfig& cfg) {
  if (cfg.patch_size <= 0 || cfg.img_size <= 0 || cfg.img_size % cfg.patch_size) {
    throw ValidationError("img_size must be a positive multiple of patch_size");
  }
  if (cfg.window_size <= 0) throw ValidationError("window_size must be positive");
  StageTable table;
  const int stages = cfg.num_stages();
  for (int s = 0; s <= stages; ++s) {
    const int res = cfg.stage_resolution(s);
    if (res <= 0 || (cfg.grid_size() % (1 << s)) != 0) {
      throw ValidationError("stage " + std::to_string(s) + ": token grid " +
                            std::to_string(cfg.grid_size()) + " cannot be halved " +
                            std::to_string(s) + " times");
    }
    if (res % cfg.window_size) {
      throw ValidationError("stage " + std::to_string(s) + " resolution " + std::to_string(res) +
                            " is not divisible by window_size " + std::to_string(cfg.window_size));
    }
    const StageShape shape{res, res, cfg.stage_channels(s)};
    if (s < stages) {
      table.encoder.push_back(shape);
    } else {
      table.bottleneck = shape;
    }
  }
  for (int s = stages - 1; s >= 0; --s) table.decoder.push_back(table.encoder[s]);
  table.output = {cfg.img_size, cfg.img_size, 1};
  return table;
}

inline void validate(const ModelConfig& cfg) {
  const auto fail = [](const std::string& what) { throw ValidationError(what); };
  if (cfg.img_size <= 0 || cfg.patch_size <= 0) fail("img_size and patch_size must be positive");
  if (cfg.img_size % cfg.patch_size) fail("img_size must be divisible by patch_size");
  if (cfg.in_channels <= 0) fail("in_channels must be positive");
  if (cfg.embed_dim <= 0) fail("embed_dim must be positive");
  if (cfg.encoder_depths.empty()) fail("encoder_depths must list at least one stage");
  if (cfg.decoder_depths.size() != cfg.encoder_depths.size()) {
    fail("decoder_depths must have one entry per encoder stage");
  }
  if (cfg.num_heads.size() != cfg.encoder_depths.size() + 1) {
    fail("num_heads must have one entry per encoder stage plus one for the bottleneck");
  }
  for (int d : cfg.encoder_depths) {
    if (d <= 0) fail("encoder_depths entries must be positive");
  }
  for (int d : cfg.decoder_depths) {
    if (d <= 0) fail("decoder_depths entries must be positive");
  }
  if (cfg.bottleneck_depth <= 0) fail("bottleneck_depth must be positive");
  for (std::size_t s = 0; s < cfg.num_heads.size(); ++s) {
    const int h = cfg.num_heads[s];
    if (h <= 0) fail("num_heads entries must be positive");
    if (cfg.embed_dim % h) fail("embed_dim must be divisible by every num_heads entry");
    if (cfg.stage_channels(static_cast<int>(s)) % h) {
      fail("stage " + std::to_string(s) + " width is not divisible by its head count");
    }
  }
  if (!(cfg.mlp_ratio > 0)) fail("mlp_ratio must be positive");
  if (!(cfg.drop_rate >= 0 && cfg.drop_rate < 1)) fail("drop_rate must be in [0, 1)");
  if (cfg.skip_connection_count < 0 || cfg.skip_connection_count > cfg.max_skip_connections()) {
    fail("skip_connection_count must be in [0, " + std::to_string(cfg.max_skip_connections()) + "]");
  }
  validate_shapes(cfg);
}

inline void validate(const TrainConfig& cfg) {
  const auto fail = [](const std::string& what) { throw ValidationError(what); };
  const auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (cfg.batch_size <= 0) fail("batch_size must be positive");
  if (cfg.epochs <= 0) fail("epochs must be positive");
  if (cfg.warmup_epochs < 0 || cfg.warmup_epochs >= cfg.epochs) fail("warmup_epochs must be < epochs");
  if (!(cfg.base_lr >= 0)) fail("base_lr must be nonnegative");
  if (cfg.decay_epochs <= 0) fail("decay_epochs must be positive");
  if (!(cfg.decay_rate > 0 && cfg.decay_rate <= 1)) fail("decay_rate must be in (0, 1]");
  if (!(cfg.weight_decay >= 0)) fail("weight_decay must be nonnegative");
  if (!(cfg.clip_grad > 0)) fail("clip_grad must be positive");
  if (!(cfg.betas[0] >= 0 && cfg.betas[0] < 1 && cfg.betas[1] >= 0 && cfg.betas[1] < 1)) {
    fail("betas must be in [0, 1)");
  }
  if (!(cfg.adam_eps > 0)) fail("adam_eps must be positive");
  if (!unit(cfg.alpha)) fail("alpha must be in [0, 1]");
  if (!unit(cfg.beta)) fail("beta must be in [0, 1]");
  if (!unit(cfg.threshold)) fail("threshold must be in [0, 1]");
  if (!(cfg.label_smoothing >= 0 && cfg.label_smoothing < 1)) fail("label_smoothing must be in [0, 1)");
}

inline void validate(const DataConfig& cfg) {
  double total = 0;
  for (double f : cfg.split_fractions) {
    if (!(f >= 0)) throw ValidationError("split_fractions must be nonnegative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError("split_fractions must sum to 1");
  if (cfg.synthetic_count < 0) throw ValidationError("synthetic_count must be nonnegative");
}

inline void validate(const Config& cfg) {
  validate(cfg.model);
  validate(cfg.train);
  validate(cfg.data);
}

// ---------------------------------------------------------------------------
// text format

namespace config_detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, res.ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

template <class T>
T parse_number(std::string_view key, std::string_view text) {
  text = trim(text);
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + std::string(text) + "'");
  }
  return value;
}

inline std::vector<std::string_view> parse_list(std::string_view key, std::string_view text, char open,
                                                char close) {
  text = trim(text);
  if (text.size() < 2 || text.front() != open || text.back() != close) {
    throw ConfigError("config key '" + std::string(key) + "': expected " + open + "..." + close);
  }
  text = trim(text.substr(1, text.size() - 2));
  std::vector<std::string_view> items;
  if (text.empty()) return items;
  std::size_t start = 0;
  while (true) {
    const auto comma = text.find(',', start);
    items.push_back(trim(text.substr(start, comma == std::string_view::npos ? text.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  for (auto item : items) {
    if (item.empty()) throw ConfigError("config key '" + std::string(key) + "': empty list element");
  }
  return items;
}

inline std::vector<int> parse_ints(std::string_view key, std::string_view text) {
  std::vector<int> out;
  for (auto item : parse_list(key, text, '[', ']')) out.push_back(parse_number<int>(key, item));
  return out;
}

template <std::size_t N>
std::array<double, N> parse_tuple(std::string_view key, std::string_view text) {
  auto items = parse_list(key, text, '(', ')');
  if (items.size() != N) {
    throw ConfigError("config key '" + std::string(key) + "': expected " + std::to_string(N) + " values");
  }
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = parse_number<double>(key, items[i]);
  return out;
}

inline bool parse_bool(std::string_view key, std::string_view text) {
  text = trim(text);
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError("config key '" + std::string(key) + "': expected true or false");
}

inline std::string format_ints(const std::vector<int>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
  return s + "]";
}

template <std::size_t N>
std::string format_tuple(const std::array<double, N>& v) {
  std::string s = "(";
  for (std::size_t i = 0; i < N; ++i) s += (i ? ", " : "") + format_double(v[i]);
  return s + ")";
}

}  // namespace config_detail

inline const char* to_string(SkipFusion mode) {
  return mode == SkipFusion::concatenate ? "concatenate" : "additive";
}
inline const char* to_string(Augmentation op) {
  return op == Augmentation::hflip ? "hflip" : "intensity_jitter";
}

inline Augmentation parse_augmentation(std::string_view name) {
  if (name == "hflip") return Augmentation::hflip;
  if (name == "intensity_jitter") return Augmentation::intensity_jitter;
  throw ConfigError("unknown augmentation op '" + std::string(name) + "'");
}

/// Applies one `key = value` assignment.
inline void set_config_value(Config& cfg, std::string_view key, std::string_view value) {
  using namespace config_detail;
  auto& m = cfg.model;
  auto& t = cfg.train;
  auto& d = cfg.data;
  const auto as_int = [&] { return parse_number<int>(key, value); };
  const auto as_double = [&] { return parse_number<double>(key, value); };

  if (key == "img_size") m.img_size = as_int();
  else if (key == "patch_size") m.patch_size = as_int();
  else if (key == "in_channels") m.in_channels = as_int();
  else if (key == "embed_dim") m.embed_dim = as_int();
  else if (key == "encoder_depths") m.encoder_depths = parse_ints(key, value);
  else if (key == "bottleneck_depth") m.bottleneck_depth = as_int();
  else if (key == "decoder_depths") m.decoder_depths = parse_ints(key, value);
  else if (key == "num_heads") m.num_heads = parse_ints(key, value);
  else if (key == "window_size") m.window_size = as_int();
  else if (key == "mlp_ratio") m.mlp_ratio = as_double();
  else if (key == "drop_rate") m.drop_rate = as_double();
  else if (key == "skip_connection_count") m.skip_connection_count = as_int();
  else if (key == "skip_fusion_mode") {
    const auto v = trim(value);
    if (v == "concatenate") m.skip_fusion_mode = SkipFusion::concatenate;
    else if (v == "additive") m.skip_fusion_mode = SkipFusion::additive;
    else throw ConfigError("config key 'skip_fusion_mode': expected concatenate or additive");
  }
  else if (key == "dual_decoder") m.dual_decoder = parse_bool(key, value);
  else if (key == "ptmc_encoder_skip") m.ptmc_encoder_skip = parse_bool(key, value);
  else if (key == "relative_position_bias") m.relative_position_bias = parse_bool(key, value);
  else if (key == "batch_size") t.batch_size = as_int();
  else if (key == "epochs") t.epochs = as_int();
  else if (key == "warmup_epochs") t.warmup_epochs = as_int();
  else if (key == "base_lr") t.base_lr = as_double();
  else if (key == "decay_epochs") t.decay_epochs = as_int();
  else if (key == "decay_rate") t.decay_rate = as_double();
  else if (key == "weight_decay") t.weight_decay = as_double();
  else if (key == "clip_grad") t.clip_grad = as_double();
  else if (key == "betas") t.betas = parse_tuple<2>(key, value);
  else if (key == "adam_eps") t.adam_eps = as_double();
  else if (key == "alpha") t.alpha = as_double();
  else if (key == "beta") t.beta = as_double();
  else if (key == "seed") t.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "threshold") t.threshold = as_double();
  else if (key == "label_smoothing") t.label_smoothing = as_double();
  else if (key == "dataset_root") d.dataset_root = std::string(trim(value));
  else if (key == "split_fractions") d.split_fractions = parse_tuple<3>(key, value);
  else if (key == "synthetic") d.synthetic = parse_bool(key, value);
  else if (key == "synthetic_count") d.synthetic_count = as_int();
  else if (key == "augmentation") {
    d.augmentation.clear();
    if (trim(value) != "none") {
      for (auto item : parse_list(key, value, '[', ']')) {
        if (item == "none") continue;
        try {
          d.augmentation.push_back(parse_augmentation(item));
        } catch (const ConfigError&) {
          throw ConfigError("config key 'augmentation': unknown op '" + std::string(item) + "'");
        }
      }
    }
  }
  else throw ConfigError("unknown config key '" + std::string(key) + "'");
}

/// Parses config text on top of the defaults and validates the result.
inline Config parse_config(std::string_view text) {
  Config cfg;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find('\n', start);
    std::string_view line = text.substr(start, end == std::string_view::npos ? text.npos : end - start);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = config_detail::trim(line);
    if (!line.empty()) {
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) {
        throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value' for '" +
                          std::string(line) + "'");
      }
      const auto key = config_detail::trim(line.substr(0, eq));
      if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": missing key");
      set_config_value(cfg, key, line.substr(eq + 1));
    }
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  validate(cfg);
  return cfg;
}

inline Config load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

/// Fully resolved config in the same `key = value` format.
inline std::string serialize_config(const Config& cfg) {
  using namespace config_detail;
  const auto& m = cfg.model;
  const auto& t = cfg.train;
  const auto& d = cfg.data;
  std::ostringstream os;
  os << "# model\n"
     << "img_size = " << m.img_size << '\n'
     << "patch_size = " << m.patch_size << '\n'
     << "in_channels = " << m.in_channels << '\n'
     << "embed_dim = " << m.embed_dim << '\n'
     << "encoder_depths = " << format_ints(m.encoder_depths) << '\n'
     << "bottleneck_depth = " << m.bottleneck_depth << '\n'
     << "decoder_depths = " << format_ints(m.decoder_depths) << '\n'
     << "num_heads = " << format_ints(m.num_heads) << '\n'
     << "window_size = " << m.window_size << '\n'
     << "mlp_ratio = " << format_double(m.mlp_ratio) << '\n'
     << "drop_rate = " << format_double(m.drop_rate) << '\n'
     << "skip_connection_count = " << m.skip_connection_count << '\n'
     << "skip_fusion_mode = " << to_string(m.skip_fusion_mode) << '\n'
     << "dual_decoder = " << (m.dual_decoder ? "true" : "false") << '\n'
     << "ptmc_encoder_skip = " << (m.ptmc_encoder_skip ? "true" : "false") << '\n'
     << "relative_position_bias = " << (m.relative_position_bias ? "true" : "false") << '\n'
     << "# training\n"
     << "batch_size = " << t.batch_size << '\n'
     << "epochs = " << t.epochs << '\n'
     << "warmup_epochs = " << t.warmup_epochs << '\n'
     << "base_lr = " << format_double(t.base_lr) << '\n'
     << "decay_epochs = " << t.decay_epochs << '\n'
     << "decay_rate = " << format_double(t.decay_rate) << '\n'
     << "weight_decay = " << format_double(t.weight_decay) << '\n'
     << "clip_grad = " << format_double(t.clip_grad) << '\n'
     << "betas = " << format_tuple(t.betas) << '\n'
     << "adam_eps = " << format_double(t.adam_eps) << '\n'
     << "alpha = " << format_double(t.alpha) << '\n'
     << "beta = " << format_double(t.beta) << '\n'
     << "seed = " << t.seed << '\n'
     << "threshold = " << format_double(t.threshold) << '\n'
     << "label_smoothing = " << format_double(t.label_smoothing) << '\n'
     << "# data\n"
     << "dataset_root = " << d.dataset_root << '\n'
     << "split_fractions = " << format_tuple(d.split_fractions) << '\n'
     << "synthetic = " << (d.synthetic ? "true" : "false") << '\n'
     << "synthetic_count = " << d.synthetic_count << '\n'
     << "augmentation = ";
  if (d.augmentation.empty()) {
    os << "none";
  } else {
    os << '[';
    for (std::size_t i = 0; i < d.augmentation.size(); ++i) os << (i ? ", " : "") << to_string(d.augmentation[i]);
    os << ']';
  }
  os << '\n';
  return os.str();
}

}  // namespace dualswin
