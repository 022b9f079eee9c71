#pragma once

// Encoder f and projection head g. Two encoder kinds:
//   small_cnn: [conv3x3 -> BN -> ReLU -> avgpool2]* -> global avg pool -> dense
//   mlp:       flatten -> (dense -> ReLU) x2
// Projection head: dense -> BN -> ReLU -> dense. Rows are L2-normalized by
// the loss/curation consumers, not here.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "sscl/autodiff.hpp"
#include "sscl/common.hpp"

namespace sscl {

enum class EncoderKind { small_cnn, mlp };

inline EncoderKind parse_encoder_kind(const std::string& s) {
  if (s == "small_cnn") return EncoderKind::small_cnn;
  if (s == "mlp") return EncoderKind::mlp;
  throw config_error("unknown encoder kind: " + s);
}

inline std::string to_string(EncoderKind k) {
  return k == EncoderKind::small_cnn ? "small_cnn" : "mlp";
}

struct EncoderConfig {
  EncoderKind kind = EncoderKind::mlp;
  std::vector<std::int64_t> conv_channels = {16, 32, 64};
  std::int64_t kernel_size = 3;
  std::int64_t hidden_dim = 128;
  std::int64_t projection_dim = 32;
  std::uint64_t init_seed = 1;
  // input geometry, fixed at construction
  std::int64_t in_channels = 1;
  std::int64_t in_height = 28;
  std::int64_t in_width = 28;

  void validate(std::int64_t batch_size = 0) const {
    if (hidden_dim < 1 || projection_dim < 1)
      throw config_error("encoder: dims must be positive");
    if (projection_dim > hidden_dim)
      throw config_error("encoder: projection_dim must be <= hidden_dim");
    if (batch_size > 0 && projection_dim >= batch_size)
      throw config_error(
          "encoder: projection_dim must be < batch size (covariance "
          "estimability)");
    if (kind == EncoderKind::small_cnn) {
      if (conv_channels.empty())
        throw config_error("encoder: small_cnn needs conv channels");
      std::int64_t h = in_height, w = in_width;
      for (std::size_t i = 0; i < conv_channels.size(); ++i) {
        h /= 2;
        w /= 2;
        if (h < 1 || w < 1)
          throw config_error(
              "encoder: input spatial size too small for the conv stack");
      }
    }
  }
};

struct ModelParams {
  EncoderConfig config;
  std::vector<std::string> order;                 // stable parameter order
  std::map<std::string, TensorPtr> tensors;       // params and BN buffers
  std::map<std::string, BatchNormState> bn_state;

  TensorPtr& param(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw contract_error("unknown parameter: " + name);
    return it->second;
  }
  const TensorPtr& param(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw contract_error("unknown parameter: " + name);
    return it->second;
  }

  void add(const std::string& name, TensorPtr t) {
    order.push_back(name);
    tensors[name] = std::move(t);
  }

  /// Trainable tensors only (BN running buffers excluded).
  std::vector<std::string> trainable() const {
    std::vector<std::string> out;
    for (const auto& n : order)
      if (tensors.at(n)->requires_grad) out.push_back(n);
    return out;
  }

  void zero_grad() {
    for (auto& [name, t] : tensors)
      if (t->requires_grad) t->zero_grad();
  }

  // BN running statistics live in bn_state during forward passes and are
  // mirrored into the named buffer tensors for checkpointing.
  void sync_buffers_from_state() {
    for (auto& [key, st] : bn_state) {
      if (st.running_mean.empty()) continue;
      tensors.at(key + ".running_mean")->data = st.running_mean;
      tensors.at(key + ".running_var")->data = st.running_var;
    }
  }
  void sync_state_from_buffers() {
    for (auto& [key, st] : bn_state) {
      st.running_mean = tensors.at(key + ".running_mean")->data;
      st.running_var = tensors.at(key + ".running_var")->data;
    }
  }
};

namespace detail {

inline TensorPtr kaiming_init(std::vector<std::int64_t> shape,
                              std::int64_t fan_in, SplitMix64& rng) {
  auto t = make_tensor(std::move(shape), true);
  const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t->data) v = scale * rng.normal();
  return t;
}

inline void add_bn(ModelParams& p, const std::string& key, std::int64_t dim) {
  auto gamma = make_tensor({dim}, true);
  std::fill(gamma->data.begin(), gamma->data.end(), 1.0);
  auto beta = make_tensor({dim}, true);
  p.add(key + ".gamma", gamma);
  p.add(key + ".beta", beta);
  auto rm = make_tensor({dim});
  auto rv = make_tensor({dim});
  std::fill(rv->data.begin(), rv->data.end(), 1.0);
  p.add(key + ".running_mean", rm);
  p.add(key + ".running_var", rv);
  p.bn_state[key] = BatchNormState{rm->data, rv->data};
}

}  // namespace detail

/// Kaiming fan-in scaled initialization, fully determined by init_seed.
inline ModelParams init_params(const EncoderConfig& config) {
  config.validate();
  ModelParams p;
  p.config = config;
  SplitMix64 rng(config.init_seed);
  if (config.kind == EncoderKind::small_cnn) {
    std::int64_t ch = config.in_channels;
    for (std::size_t b = 0; b < config.conv_channels.size(); ++b) {
      const std::int64_t oc = config.conv_channels[b];
      const std::string key = "encoder.block" + std::to_string(b);
      p.add(key + ".kernel",
            detail::kaiming_init(
                {oc, ch, config.kernel_size, config.kernel_size},
                ch * config.kernel_size * config.kernel_size, rng));
      detail::add_bn(p, key + ".bn", oc);
      ch = oc;
    }
    p.add("encoder.fc.weight",
          detail::kaiming_init({ch, config.hidden_dim}, ch, rng));
    p.add("encoder.fc.bias", make_tensor({config.hidden_dim}, true));
  } else {
    const std::int64_t in_dim =
        config.in_channels * config.in_height * config.in_width;
    p.add("encoder.fc1.weight",
          detail::kaiming_init({in_dim, config.hidden_dim}, in_dim, rng));
    p.add("encoder.fc1.bias", make_tensor({config.hidden_dim}, true));
    p.add("encoder.fc2.weight",
          detail::kaiming_init({config.hidden_dim, config.hidden_dim},
                               config.hidden_dim, rng));
    p.add("encoder.fc2.bias", make_tensor({config.hidden_dim}, true));
  }
  p.add("proj.fc1.weight",
        detail::kaiming_init({config.hidden_dim, config.hidden_dim},
                             config.hidden_dim, rng));
  p.add("proj.fc1.bias", make_tensor({config.hidden_dim}, true));
  detail::add_bn(p, "proj.bn", config.hidden_dim);
  p.add("proj.fc2.weight",
        detail::kaiming_init({config.hidden_dim, config.projection_dim},
                             config.hidden_dim, rng));
  p.add("proj.fc2.bias", make_tensor({config.projection_dim}, true));
  return p;
}

/// h = f(x). images: [N x C x H x W] -> [N x hidden_dim].
inline TensorPtr encoder_forward(Tape& tape, ModelParams& params,
                                 const TensorPtr& images, bool training) {
  const auto& cfg = params.config;
  if (images->shape.size() != 4 || images->shape[1] != cfg.in_channels ||
      images->shape[2] != cfg.in_height || images->shape[3] != cfg.in_width)
    throw dim_error("encoder_forward: input geometry does not match config");
  if (cfg.kind == EncoderKind::small_cnn) {
    TensorPtr x = images;
    for (std::size_t b = 0; b < cfg.conv_channels.size(); ++b) {
      const std::string key = "encoder.block" + std::to_string(b);
      x = conv2d(tape, x, params.param(key + ".kernel"), 1,
                 (cfg.kernel_size - 1) / 2);
      x = batch_norm2d(tape, x, params.param(key + ".bn.gamma"),
                       params.param(key + ".bn.beta"),
                       params.bn_state[key + ".bn"], 1e-5, 0.1, training);
      x = relu(tape, x);
      x = avg_pool2(tape, x);
    }
    x = global_avg_pool(tape, x);
    return dense(tape, x, params.param("encoder.fc.weight"),
                 params.param("encoder.fc.bias"));
  }
  auto flat = flatten(tape, images);
  auto h1 = relu(tape, dense(tape, flat, params.param("encoder.fc1.weight"),
                             params.param("encoder.fc1.bias")));
  return relu(tape, dense(tape, h1, params.param("encoder.fc2.weight"),
                          params.param("encoder.fc2.bias")));
}

/// z = g(h): dense -> BN -> ReLU -> dense, [N x projection_dim].
inline TensorPtr projection_forward(Tape& tape, ModelParams& params,
                                    const TensorPtr& h, bool training) {
  if (h->shape.size() != 2 || h->shape[1] != params.config.hidden_dim)
    throw dim_error("projection_forward: h width != hidden_dim");
  auto x = dense(tape, h, params.param("proj.fc1.weight"),
                 params.param("proj.fc1.bias"));
  x = batch_norm(tape, x, params.param("proj.bn.gamma"),
                 params.param("proj.bn.beta"), params.bn_state["proj.bn"],
                 1e-5, 0.1, training);
  x = relu(tape, x);
  return dense(tape, x, params.param("proj.fc2.weight"),
               params.param("proj.fc2.bias"));
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "CUR1", version u32, then length-prefixed
// (name, shape, raw little-endian doubles) records. Round-trips bitwise.

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw format_error("corrupt checkpoint (truncated at offset " +
                       std::to_string(static_cast<long long>(is.tellg())) +
                       "): " + path);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

}  // namespace detail

inline void save_checkpoint(ModelParams& params, const std::string& path) {
  params.sync_buffers_from_state();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw data_error("cannot write checkpoint: " + path);
  os.write("CUR1", 4);
  detail::put_u32(os, 1);  // version
  // config header record so a checkpoint alone can rebuild the model
  const auto& c = params.config;
  std::vector<double> meta = {
      static_cast<double>(c.kind == EncoderKind::small_cnn ? 0 : 1),
      static_cast<double>(c.kernel_size),
      static_cast<double>(c.hidden_dim),
      static_cast<double>(c.projection_dim),
      static_cast<double>(c.in_channels),
      static_cast<double>(c.in_height),
      static_cast<double>(c.in_width),
      static_cast<double>(c.conv_channels.size())};
  for (auto v : c.conv_channels) meta.push_back(static_cast<double>(v));
  auto write_record = [&os](const std::string& name,
                            const std::vector<std::int64_t>& shape,
                            const std::vector<double>& data) {
    detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) detail::put_u32(os, static_cast<std::uint32_t>(d));
    // doubles are written little-endian byte for byte
    for (double v : data) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      unsigned char b[8];
      for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
      os.write(reinterpret_cast<const char*>(b), 8);
    }
  };
  write_record("__config", {static_cast<std::int64_t>(meta.size())}, meta);
  for (const auto& name : params.order)
    write_record(name, params.tensors.at(name)->shape,
                 params.tensors.at(name)->data);
  if (!os) throw data_error("write failure on checkpoint: " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("cannot open checkpoint: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "CUR1", 4) != 0)
    throw format_error("bad checkpoint magic at offset 0: " + path);
  const std::uint32_t version = detail::get_u32(is, path);
  if (version != 1)
    throw format_error("unsupported checkpoint version " +
                       std::to_string(version) + ": " + path);
  auto read_record = [&is, &path](std::string& name,
                                  std::vector<std::int64_t>& shape,
                                  std::vector<double>& data) -> bool {
    unsigned char probe;
    if (!is.read(reinterpret_cast<char*>(&probe), 1)) return false;
    is.putback(static_cast<char>(probe));
    const std::uint32_t name_len = detail::get_u32(is, path);
    name.resize(name_len);
    if (!is.read(name.data(), name_len))
      throw format_error("corrupt checkpoint record name: " + path);
    const std::uint32_t rank = detail::get_u32(is, path);
    shape.resize(rank);
    std::int64_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      shape[i] = detail::get_u32(is, path);
      n *= shape[i];
    }
    data.resize(static_cast<std::size_t>(n));
    for (auto& v : data) {
      unsigned char b[8];
      if (!is.read(reinterpret_cast<char*>(b), 8))
        throw format_error("corrupt checkpoint (truncated tensor data at offset " +
                           std::to_string(static_cast<long long>(is.tellg())) +
                           "): " + path);
      std::uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) bits |= std::uint64_t(b[i]) << (8 * i);
      std::memcpy(&v, &bits, 8);
    }
    return true;
  };
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<double> data;
  if (!read_record(name, shape, data) || name != "__config")
    throw format_error("checkpoint missing config record: " + path);
  EncoderConfig cfg;
  cfg.kind = data[0] == 0 ? EncoderKind::small_cnn : EncoderKind::mlp;
  cfg.kernel_size = static_cast<std::int64_t>(data[1]);
  cfg.hidden_dim = static_cast<std::int64_t>(data[2]);
  cfg.projection_dim = static_cast<std::int64_t>(data[3]);
  cfg.in_channels = static_cast<std::int64_t>(data[4]);
  cfg.in_height = static_cast<std::int64_t>(data[5]);
  cfg.in_width = static_cast<std::int64_t>(data[6]);
  cfg.conv_channels.clear();
  const auto nconv = static_cast<std::size_t>(data[7]);
  for (std::size_t i = 0; i < nconv; ++i)
    cfg.conv_channels.push_back(static_cast<std::int64_t>(data[8 + i]));
  ModelParams params = init_params(cfg);
  while (read_record(name, shape, data)) {
    auto it = params.tensors.find(name);
    if (it == params.tensors.end())
      throw format_error("checkpoint names unknown tensor '" + name +
                         "': " + path);
    if (it->second->shape != shape)
      throw format_error("checkpoint shape mismatch for '" + name +
                         "': " + path);
    it->second->data = std::move(data);
    data = {};
  }
  params.sync_state_from_buffers();
  return params;
}

}  // namespace sscl
