#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "sscl/autodiff.hpp"
#include "sscl/common.hpp"
#include "sscl/model.hpp"

using namespace sscl;
namespace fs = std::filesystem;

namespace {

EncoderConfig small_mlp() {
  EncoderConfig c;
  c.kind = EncoderKind::mlp;
  c.hidden_dim = 16;
  c.projection_dim = 8;
  c.in_channels = 1;
  c.in_height = 6;
  c.in_width = 6;
  return c;
}

EncoderConfig small_cnn_cfg() {
  EncoderConfig c;
  c.kind = EncoderKind::small_cnn;
  c.conv_channels = {4, 8};
  c.hidden_dim = 16;
  c.projection_dim = 8;
  c.in_channels = 1;
  c.in_height = 8;
  c.in_width = 8;
  return c;
}

TensorPtr random_images(const EncoderConfig& c, std::int64_t n,
                        std::uint64_t seed, bool requires_grad = false) {
  auto x = make_tensor({n, c.in_channels, c.in_height, c.in_width},
                       requires_grad);
  SplitMix64 rng(seed);
  for (auto& v : x->data) v = rng.normal();
  return x;
}

}  // namespace

TEST_CASE("forward shapes for both encoder kinds") {
  for (auto cfg : {small_mlp(), small_cnn_cfg()}) {
    auto params = init_params(cfg);
    auto x = random_images(cfg, 5, 3);
    Tape tape;
    auto h = encoder_forward(tape, params, x, true);
    CHECK(h->shape == std::vector<std::int64_t>{5, cfg.hidden_dim});
    auto z = projection_forward(tape, params, h, true);
    CHECK(z->shape == std::vector<std::int64_t>{5, cfg.projection_dim});
    for (double v : z->data) CHECK(std::isfinite(v));
  }
}

TEST_CASE("forward is deterministic and geometry errors are caught") {
  auto cfg = small_mlp();
  auto p1 = init_params(cfg);
  auto p2 = init_params(cfg);
  auto x = random_images(cfg, 4, 9);
  Tape t1, t2;
  auto z1 = projection_forward(t1, p1, encoder_forward(t1, p1, x, true), true);
  auto z2 = projection_forward(t2, p2, encoder_forward(t2, p2, x, true), true);
  CHECK(z1->data == z2->data);

  auto bad = make_tensor({4, 1, 5, 6});
  Tape t3;
  CHECK_THROWS_AS(encoder_forward(t3, p1, bad, true), dim_error);
  auto bad_h = make_tensor({4, cfg.hidden_dim + 1});
  CHECK_THROWS_AS(projection_forward(t3, p1, bad_h, true), dim_error);
}

TEST_CASE("init: seed determinism and kaiming variance") {
  auto cfg = small_mlp();
  cfg.init_seed = 42;
  auto a = init_params(cfg);
  auto b = init_params(cfg);
  for (const auto& n : a.order) CHECK(a.tensors.at(n)->data == b.tensors.at(n)->data);
  cfg.init_seed = 43;
  auto c = init_params(cfg);
  CHECK(a.param("encoder.fc1.weight")->data != c.param("encoder.fc1.weight")->data);

  // fc1 has fan_in = 36; sample variance should be near 2/fan_in
  EncoderConfig wide = cfg;
  wide.in_height = wide.in_width = 16;  // fan_in 256, hidden 16: 4096 samples
  auto w = init_params(wide).param("encoder.fc1.weight");
  double mean = 0;
  for (double v : w->data) mean += v;
  mean /= static_cast<double>(w->data.size());
  double var = 0;
  for (double v : w->data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(w->data.size());
  const double target = 2.0 / 256.0;
  CHECK(var >= 0.8 * target);
  CHECK(var <= 1.2 * target);

  // biases start at zero, BN gamma at one
  for (double v : a.param("encoder.fc1.bias")->data) CHECK(v == 0.0);
  for (double v : a.param("proj.bn.gamma")->data) CHECK(v == 1.0);
  for (double v : a.param("proj.bn.running_var")->data) CHECK(v == 1.0);
}

TEST_CASE("trainable() excludes running buffers") {
  auto params = init_params(small_cnn_cfg());
  for (const auto& n : params.trainable()) {
    CHECK(n.find("running_mean") == std::string::npos);
    CHECK(n.find("running_var") == std::string::npos);
  }
  CHECK(params.tensors.count("encoder.block0.bn.running_mean") == 1);
  CHECK_FALSE(params.tensors.at("encoder.block0.bn.running_mean")->requires_grad);
}

TEST_CASE("gradient check through encoder + head") {
  for (auto cfg : {small_mlp(), small_cnn_cfg()}) {
    cfg.hidden_dim = 8;
    cfg.projection_dim = 4;
    auto params = init_params(cfg);
    auto x = random_images(cfg, 3, 17, true);
    std::vector<TensorPtr> inputs = {x};
    for (const auto& n : params.trainable())
      inputs.push_back(params.param(n));
    const double err = grad_check(
        [&](Tape& tape) {
          auto h = encoder_forward(tape, params, x, true);
          auto z = projection_forward(tape, params, h, true);
          return mean_all(tape, mul(tape, z, z));
        },
        inputs, 1e-5);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("inference mode uses running BN stats and mutates nothing") {
  auto cfg = small_mlp();
  auto params = init_params(cfg);
  // train a few forward passes so running stats move off their init
  for (int i = 0; i < 3; ++i) {
    Tape tape;
    auto x = random_images(cfg, 6, 100 + static_cast<std::uint64_t>(i));
    projection_forward(tape, params, encoder_forward(tape, params, x, true),
                       true);
  }
  const auto rm = params.bn_state["proj.bn"].running_mean;
  CHECK(rm != std::vector<double>(rm.size(), 0.0));
  Tape tape;
  auto x = random_images(cfg, 4, 200);
  auto z1 = projection_forward(tape, params, encoder_forward(tape, params, x, false), false);
  CHECK(params.bn_state["proj.bn"].running_mean == rm);
  Tape tape2;
  auto z2 = projection_forward(tape2, params, encoder_forward(tape2, params, x, false), false);
  CHECK(z1->data == z2->data);  // eval forward is a pure function
}

TEST_CASE("checkpoint: save -> load -> save round-trips bitwise") {
  for (auto cfg : {small_mlp(), small_cnn_cfg()}) {
    auto params = init_params(cfg);
    // perturb running stats so buffers carry non-default content
    Tape tape;
    auto x = random_images(cfg, 5, 31);
    projection_forward(tape, params, encoder_forward(tape, params, x, true), true);

    auto dir = fs::temp_directory_path() / "sscl_model_tests";
    fs::create_directories(dir);
    const auto p1 = (dir / ("ck_" + to_string(cfg.kind) + ".bin")).string();
    const auto p2 = (dir / ("ck_" + to_string(cfg.kind) + "_2.bin")).string();
    save_checkpoint(params, p1);
    auto loaded = load_checkpoint(p1);
    CHECK(loaded.config.kind == cfg.kind);
    CHECK(loaded.config.hidden_dim == cfg.hidden_dim);
    CHECK(loaded.order == params.order);
    for (const auto& n : params.order) {
      CHECK(loaded.tensors.at(n)->shape == params.tensors.at(n)->shape);
      CHECK(loaded.tensors.at(n)->data == params.tensors.at(n)->data);
    }
    save_checkpoint(loaded, p2);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::vector<char> b1{std::istreambuf_iterator<char>(f1), {}};
    std::vector<char> b2{std::istreambuf_iterator<char>(f2), {}};
    CHECK(b1 == b2);

    // the two loaded models produce identical activations
    Tape ta, tb;
    auto za = projection_forward(ta, params, encoder_forward(ta, params, x, false), false);
    auto zb = projection_forward(tb, loaded, encoder_forward(tb, loaded, x, false), false);
    CHECK(za->data == zb->data);
  }
}

TEST_CASE("checkpoint corruption is rejected with a diagnostic") {
  auto dir = fs::temp_directory_path() / "sscl_model_tests";
  fs::create_directories(dir);
  auto params = init_params(small_mlp());
  const auto good = (dir / "good.bin").string();
  save_checkpoint(params, good);

  SUBCASE("bad magic") {
    const auto bad = (dir / "bad_magic.bin").string();
    std::ofstream os(bad, std::ios::binary);
    os << "NOPE";
    os.close();
    CHECK_THROWS_AS(load_checkpoint(bad), format_error);
  }
  SUBCASE("truncated tensor data") {
    std::ifstream is(good, std::ios::binary);
    std::vector<char> bytes{std::istreambuf_iterator<char>(is), {}};
    is.close();
    bytes.resize(bytes.size() - 9);
    const auto trunc = (dir / "trunc.bin").string();
    std::ofstream os(trunc, std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    os.close();
    CHECK_THROWS_AS(load_checkpoint(trunc), format_error);
  }
  SUBCASE("unsupported version") {
    std::ifstream is(good, std::ios::binary);
    std::vector<char> bytes{std::istreambuf_iterator<char>(is), {}};
    is.close();
    bytes[4] = 9;
    const auto vbad = (dir / "vbad.bin").string();
    std::ofstream os(vbad, std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    os.close();
    CHECK_THROWS_AS(load_checkpoint(vbad), format_error);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint((dir / "absent.bin").string()), data_error);
  }
}

TEST_CASE("config validation") {
  auto cfg = small_mlp();
  cfg.projection_dim = 32;  // > hidden_dim 16
  CHECK_THROWS_AS(cfg.validate(), config_error);
  cfg = small_mlp();
  CHECK_THROWS_AS(cfg.validate(8), config_error);  // projection_dim 8 >= batch 8
  cfg = small_cnn_cfg();
  cfg.conv_channels = {4, 8, 16, 32};  // 8x8 cannot halve four times
  CHECK_THROWS_AS(cfg.validate(), config_error);
  CHECK_THROWS_AS(parse_encoder_kind("resnet50"), config_error);
}
