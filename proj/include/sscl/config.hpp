#pragma once

// Run configuration: a flat key-value text document with dotted keys
// (e.g. "loss.temperature = 0.5"). Unknown keys are errors. Two built-in
// profiles: "desk" (minutes on a laptop CPU) and "paper" (the full-scale
// schedule).

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sscl/augment.hpp"
#include "sscl/common.hpp"
#include "sscl/curation.hpp"
#include "sscl/losses.hpp"
#include "sscl/model.hpp"

namespace sscl {

struct OptimizerConfig {
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

struct DatasetConfig {
  std::string name = "synthetic";  // synthetic | mnist | cifar10
  std::int64_t limit = 0;          // 0 = whole dataset
  int synthetic_classes = 10;
  int synthetic_per_class = 100;
  std::int64_t synthetic_size = 28;
  std::uint64_t synthetic_seed = 11;
};

struct TrainConfig {
  int epochs = 30;
  std::int64_t batch_size = 128;
  double base_lr = 0.5;
  int warmup_epochs = 5;
  int calibration_epoch = 5;
  bool curation_enabled = true;
  std::uint64_t seed = 1;
  int checkpoint_every = 10;
  LossConfig loss;
  TransformSpec transform;
  EncoderConfig encoder;
  OptimizerConfig optimizer;
  CurationConfig curation;
  DatasetConfig dataset;

  void validate() const {
    if (epochs < 1) throw config_error("epochs must be >= 1");
    if (batch_size < 2) throw config_error("batch_size must be >= 2");
    if (calibration_epoch >= epochs)
      throw config_error("calibration_epoch must be < epochs");
    if (warmup_epochs > epochs)
      throw config_error("warmup_epochs must be <= epochs");
    if (warmup_epochs < 1) throw config_error("warmup_epochs must be >= 1");
    loss.validate();
    transform.validate();
    encoder.validate(batch_size);
  }

  /// Full-scale schedule: 200 epochs, 30 warmup, small CNN.
  static TrainConfig paper_profile() {
    TrainConfig c;
    c.epochs = 200;
    c.warmup_epochs = 30;
    c.encoder.kind = EncoderKind::small_cnn;
    return c;
  }

  /// Desk-scale profile: runs in minutes single-threaded.
  static TrainConfig desk_profile() {
    TrainConfig c;
    c.epochs = 30;
    c.warmup_epochs = 5;
    c.encoder.kind = EncoderKind::mlp;
    return c;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw config_error("config key '" + key + "': expected boolean, got '" + v + "'");
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return x;
  } catch (...) {
    throw config_error("config key '" + key + "': expected number, got '" + v + "'");
  }
}

inline std::int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos;
    const long long x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return x;
  } catch (...) {
    throw config_error("config key '" + key + "': expected integer, got '" + v + "'");
  }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos;
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return x;
  } catch (...) {
    throw config_error("config key '" + key + "': expected integer, got '" + v + "'");
  }
}

}  // namespace detail

/// Apply one dotted key. Throws config_error naming the key when unknown.
inline void apply_config_key(TrainConfig& c, const std::string& key,
                             const std::string& value) {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_int;
  using detail::parse_u64;
  if (key == "profile") {
    if (value == "desk")
      c = TrainConfig::desk_profile();
    else if (value == "paper")
      c = TrainConfig::paper_profile();
    else
      throw config_error("config key 'profile': expected desk or paper");
  } else if (key == "epochs") c.epochs = static_cast<int>(parse_int(key, value));
  else if (key == "batch_size") c.batch_size = parse_int(key, value);
  else if (key == "base_lr") c.base_lr = parse_double(key, value);
  else if (key == "warmup_epochs") c.warmup_epochs = static_cast<int>(parse_int(key, value));
  else if (key == "calibration_epoch") c.calibration_epoch = static_cast<int>(parse_int(key, value));
  else if (key == "curation_enabled") c.curation_enabled = parse_bool(key, value);
  else if (key == "seed") c.seed = parse_u64(key, value);
  else if (key == "checkpoint_every") c.checkpoint_every = static_cast<int>(parse_int(key, value));
  else if (key == "loss.temperature") c.loss.temperature = parse_double(key, value);
  else if (key == "loss.huber_delta") c.loss.huber_delta = parse_double(key, value);
  else if (key == "loss.lambda") c.loss.lambda = parse_double(key, value);
  else if (key == "loss.regularizer_kind") c.loss.regularizer_kind = parse_regularizer_kind(value);
  else if (key == "transform.crop_scale_min") c.transform.crop_scale_min = parse_double(key, value);
  else if (key == "transform.crop_scale_max") c.transform.crop_scale_max = parse_double(key, value);
  else if (key == "transform.flip_prob") c.transform.flip_prob = parse_double(key, value);
  else if (key == "transform.jitter_prob") c.transform.jitter_prob = parse_double(key, value);
  else if (key == "transform.jitter_strength") c.transform.jitter_strength = parse_double(key, value);
  else if (key == "transform.grayscale_prob") c.transform.grayscale_prob = parse_double(key, value);
  else if (key == "transform.output_size") c.transform.output_size = parse_int(key, value);
  else if (key == "encoder.kind") c.encoder.kind = parse_encoder_kind(value);
  else if (key == "encoder.conv_channels") {
    c.encoder.conv_channels.clear();
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ','))
      c.encoder.conv_channels.push_back(parse_int(key, detail::trim(item)));
  } else if (key == "encoder.kernel_size") c.encoder.kernel_size = parse_int(key, value);
  else if (key == "encoder.hidden_dim") c.encoder.hidden_dim = parse_int(key, value);
  else if (key == "encoder.projection_dim") c.encoder.projection_dim = parse_int(key, value);
  else if (key == "encoder.init_seed") c.encoder.init_seed = parse_u64(key, value);
  else if (key == "optimizer.momentum") c.optimizer.momentum = parse_double(key, value);
  else if (key == "optimizer.weight_decay") c.optimizer.weight_decay = parse_double(key, value);
  else if (key == "curation.source") {
    if (value == "z") c.curation.use_projection = true;
    else if (value == "h") c.curation.use_projection = false;
    else throw config_error("config key 'curation.source': expected z or h");
  } else if (key == "curation.normalize") c.curation.normalize = parse_bool(key, value);
  else if (key == "curation.shrinkage") c.curation.shrinkage = parse_double(key, value);
  else if (key == "dataset.name") {
    if (value != "synthetic" && value != "mnist" && value != "cifar10")
      throw config_error("config key 'dataset.name': expected synthetic, mnist or cifar10");
    c.dataset.name = value;
  } else if (key == "dataset.limit") c.dataset.limit = parse_int(key, value);
  else if (key == "dataset.synthetic.classes") c.dataset.synthetic_classes = static_cast<int>(parse_int(key, value));
  else if (key == "dataset.synthetic.per_class") c.dataset.synthetic_per_class = static_cast<int>(parse_int(key, value));
  else if (key == "dataset.synthetic.size") c.dataset.synthetic_size = parse_int(key, value);
  else if (key == "dataset.synthetic.seed") c.dataset.synthetic_seed = parse_u64(key, value);
  else throw config_error("unknown config key: " + key);
}

inline TrainConfig parse_config_text(const std::string& text) {
  TrainConfig c;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw config_error("config line " + std::to_string(lineno) +
                         ": expected 'key = value'");
    apply_config_key(c, detail::trim(line.substr(0, eq)),
                     detail::trim(line.substr(eq + 1)));
  }
  c.validate();
  return c;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw config_error("cannot open config file: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

/// Canonical round-trippable rendering of a config.
inline std::string serialize_config(const TrainConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "epochs = " << c.epochs << "\n";
  os << "batch_size = " << c.batch_size << "\n";
  os << "base_lr = " << c.base_lr << "\n";
  os << "warmup_epochs = " << c.warmup_epochs << "\n";
  os << "calibration_epoch = " << c.calibration_epoch << "\n";
  os << "curation_enabled = " << (c.curation_enabled ? "true" : "false") << "\n";
  os << "seed = " << c.seed << "\n";
  os << "checkpoint_every = " << c.checkpoint_every << "\n";
  os << "loss.temperature = " << c.loss.temperature << "\n";
  os << "loss.huber_delta = " << c.loss.huber_delta << "\n";
  os << "loss.lambda = " << c.loss.lambda << "\n";
  os << "loss.regularizer_kind = " << to_string(c.loss.regularizer_kind) << "\n";
  os << "transform.crop_scale_min = " << c.transform.crop_scale_min << "\n";
  os << "transform.crop_scale_max = " << c.transform.crop_scale_max << "\n";
  os << "transform.flip_prob = " << c.transform.flip_prob << "\n";
  os << "transform.jitter_prob = " << c.transform.jitter_prob << "\n";
  os << "transform.jitter_strength = " << c.transform.jitter_strength << "\n";
  os << "transform.grayscale_prob = " << c.transform.grayscale_prob << "\n";
  os << "transform.output_size = " << c.transform.output_size << "\n";
  os << "encoder.kind = " << to_string(c.encoder.kind) << "\n";
  os << "encoder.conv_channels = ";
  for (std::size_t i = 0; i < c.encoder.conv_channels.size(); ++i)
    os << (i ? "," : "") << c.encoder.conv_channels[i];
  os << "\n";
  os << "encoder.kernel_size = " << c.encoder.kernel_size << "\n";
  os << "encoder.hidden_dim = " << c.encoder.hidden_dim << "\n";
  os << "encoder.projection_dim = " << c.encoder.projection_dim << "\n";
  os << "encoder.init_seed = " << c.encoder.init_seed << "\n";
  os << "optimizer.momentum = " << c.optimizer.momentum << "\n";
  os << "optimizer.weight_decay = " << c.optimizer.weight_decay << "\n";
  os << "curation.source = " << (c.curation.use_projection ? "z" : "h") << "\n";
  os << "curation.normalize = " << (c.curation.normalize ? "true" : "false") << "\n";
  os << "curation.shrinkage = " << c.curation.shrinkage << "\n";
  os << "dataset.name = " << c.dataset.name << "\n";
  os << "dataset.limit = " << c.dataset.limit << "\n";
  os << "dataset.synthetic.classes = " << c.dataset.synthetic_classes << "\n";
  os << "dataset.synthetic.per_class = " << c.dataset.synthetic_per_class << "\n";
  os << "dataset.synthetic.size = " << c.dataset.synthetic_size << "\n";
  os << "dataset.synthetic.seed = " << c.dataset.synthetic_seed << "\n";
  return os.str();
}

}  // namespace sscl
