#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "pixgrasp/gradcheck.hpp"
#include "pixgrasp/network.hpp"
#include "pixgrasp/rng.hpp"

using namespace pixgrasp;

namespace {

std::vector<float> random_depth(int r, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> d(static_cast<std::size_t>(r) * r);
  for (float& v : d) v = static_cast<float>(rng.uniform(0.35, 0.65));
  return d;
}

}  // namespace

TEST_CASE("zero weights map any input to all-zero maps") {
  const NetworkDescriptor desc = NetworkDescriptor::preset("toy16");
  NetworkParams<float> params = init_params<float>(desc, 1);
  for (auto& [name, t] : params.tensors) t.zero();
  const std::vector<float> depth = random_depth(16, 2);
  const ActionMaps<float> maps = forward(params, depth.data(), 1.0);
  for (const float v : maps.maps.data) CHECK(v == 0.0f);
}

TEST_CASE("output shape is 10 x R x R for every preset") {
  for (const char* preset : {"toy16", "desk64"}) {
    const NetworkDescriptor desc = NetworkDescriptor::preset(preset);
    NetworkParams<float> params = init_params<float>(desc, 3);
    const std::vector<float> depth = random_depth(desc.resolution, 4);
    const ActionMaps<float> maps = forward(params, depth.data(), 0.7);
    CHECK(maps.resolution == desc.resolution);
    CHECK(maps.maps.dims[0] == 10);
    CHECK(maps.maps.dims[1] == desc.resolution);
    CHECK(maps.maps.dims[2] == desc.resolution);
    for (const float v : maps.maps.data) CHECK(std::isfinite(v));
  }
}

TEST_CASE("paper-resolution preset runs end to end") {
  const NetworkDescriptor desc = NetworkDescriptor::preset("paper224");
  NetworkParams<float> params = init_params<float>(desc, 5);
  const std::vector<float> depth = random_depth(224, 6);
  const ActionMaps<float> maps = forward(params, depth.data(), 1.0);
  CHECK(maps.resolution == 224);
}

TEST_CASE("branch outputs depend on the injected zoom level") {
  const NetworkDescriptor desc = NetworkDescriptor::preset("toy16");
  NetworkParams<float> params = init_params<float>(desc, 7);
  const std::vector<float> depth = random_depth(16, 8);
  const ActionMaps<float> a = forward(params, depth.data(), 1.0);
  const ActionMaps<float> b = forward(params, depth.data(), 0.25);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < a.maps.data.size(); ++i) {
    max_diff = std::max(max_diff,
                        std::abs(static_cast<double>(a.maps.data[i]) -
                                 static_cast<double>(b.maps.data[i])));
  }
  CHECK(max_diff > 1e-6);
}

TEST_CASE("forward is deterministic and bit-identical") {
  const NetworkDescriptor desc = NetworkDescriptor::preset("desk64");
  NetworkParams<float> params = init_params<float>(desc, 9);
  const std::vector<float> depth = random_depth(64, 10);
  const ActionMaps<float> a = forward(params, depth.data(), 0.5);
  ForwardCache<float> cache;
  const ActionMaps<float> b = forward(params, depth.data(), 0.5, &cache);
  const ActionMaps<float> c = forward(params, depth.data(), 0.5, &cache);
  CHECK(std::memcmp(a.maps.ptr(), b.maps.ptr(),
                    a.maps.numel() * sizeof(float)) == 0);
  CHECK(std::memcmp(a.maps.ptr(), c.maps.ptr(),
                    a.maps.numel() * sizeof(float)) == 0);
}

TEST_CASE("initialization is seed-deterministic and fan-in bounded") {
  const NetworkDescriptor desc = NetworkDescriptor::preset("desk64");
  const NetworkParams<float> a = init_params<float>(desc, 42);
  const NetworkParams<float> b = init_params<float>(desc, 42);
  const NetworkParams<float> other = init_params<float>(desc, 43);
  bool any_diff = false;
  for (const auto& [name, t] : a.tensors) {
    const Tensor<float>& tb = b.at(name);
    CHECK(std::memcmp(t.ptr(), tb.ptr(), t.numel() * sizeof(float)) == 0);
    if (std::memcmp(t.ptr(), other.at(name).ptr(),
                    t.numel() * sizeof(float)) != 0) {
      any_diff = true;
    }
  }
  CHECK(any_diff);

  // enc1 kernel: fan_in = 4 * 3 * 3 with the toy's 4-channel first stage;
  // check the desk schedule instead: enc1 has fan_in 8*9.
  const Tensor<float>& w = a.at("enc1.w");
  const double bound = std::sqrt(6.0 / (8 * 9));
  for (const float v : w.data) {
    CHECK(std::abs(v) <= bound);
  }
  const Tensor<float>& ls = a.at("log_std");
  for (const float v : ls.data) CHECK(v == -1.0f);
  const Tensor<float>& bias = a.at("enc0.b");
  for (const float v : bias.data) CHECK(v == 0.0f);
}

TEST_CASE("zero upstream gradient produces zero parameter gradients") {
  const NetworkDescriptor desc = NetworkDescriptor::preset("toy16");
  NetworkParams<float> params = init_params<float>(desc, 11);
  const std::vector<float> depth = random_depth(16, 12);
  ForwardCache<float> cache;
  forward(params, depth.data(), 0.8, &cache);
  Tensor<float> maps_grad({10, 16, 16});
  Gradients<float> grads = zero_gradients(params);
  backward(params, cache, maps_grad, 0.0f, grads);
  for (const auto& [name, g] : grads.tensors) {
    for (const float v : g.data) CHECK(v == 0.0f);
  }
}

TEST_CASE("relu-dead units block gradient exactly") {
  // Single conv + relu: an input column that only feeds dead outputs must
  // receive an exactly-zero input gradient.
  ConvSpec spec{1, 1, 3, 1, 1};
  std::vector<float> x(25, -1.0f);  // 5x5, all negative
  std::vector<float> w(9, 1.0f);
  std::vector<float> b(1, 0.0f);
  std::vector<float> cols(static_cast<std::size_t>(9) * 25);
  std::vector<float> y(25);
  conv2d_forward(x.data(), 5, 5, spec, w.data(), b.data(), cols.data(), y.data());
  relu_forward(y.data(), y.size());
  for (const float v : y) CHECK(v == 0.0f);  // everything dead
  std::vector<float> gy(25, 1.0f);
  relu_backward(y.data(), gy.data(), y.size());
  for (const float v : gy) CHECK(v == 0.0f);
}

TEST_CASE("convolution is translation consistent away from borders") {
  ConvSpec spec{1, 2, 3, 2, 1};
  Rng rng(77);
  const int h = 16;
  std::vector<float> x(static_cast<std::size_t>(h) * h);
  for (float& v : x) v = static_cast<float>(rng.uniform(-1, 1));
  // Shift by the stride (2 pixels right).
  std::vector<float> xs(x.size(), 0.0f);
  for (int r = 0; r < h; ++r) {
    for (int c = 2; c < h; ++c) {
      xs[static_cast<std::size_t>(r) * h + c] = x[static_cast<std::size_t>(r) * h + c - 2];
    }
  }
  std::vector<float> w(2 * 9), b(2, 0.0f);
  for (float& v : w) v = static_cast<float>(rng.uniform(-1, 1));
  const int ho = spec.out_size(h);
  std::vector<float> cols(static_cast<std::size_t>(9) * ho * ho);
  std::vector<float> y(static_cast<std::size_t>(2) * ho * ho);
  std::vector<float> ys(y.size());
  conv2d_forward(x.data(), h, h, spec, w.data(), b.data(), cols.data(), y.data());
  conv2d_forward(xs.data(), h, h, spec, w.data(), b.data(), cols.data(), ys.data());
  // Output shifts by 1 column; compare interior.
  for (int oc = 0; oc < 2; ++oc) {
    for (int r = 1; r < ho - 1; ++r) {
      for (int c = 2; c < ho - 1; ++c) {
        const std::size_t base = static_cast<std::size_t>(oc) * ho * ho;
        CHECK(ys[base + static_cast<std::size_t>(r) * ho + c] ==
              doctest::Approx(y[base + static_cast<std::size_t>(r) * ho + c - 1])
                  .epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("upsample2x backward splits gradient additively") {
  std::vector<float> x = {1.0f, 2.0f, 3.0f, 4.0f};  // 1ch 2x2
  std::vector<float> y(16);
  upsample2x_forward(x.data(), 1, 2, 2, y.data());
  CHECK(y[0] == 1.0f);
  CHECK(y[1] == 1.0f);
  CHECK(y[4] == 1.0f);
  CHECK(y[5] == 1.0f);
  CHECK(y[15] == 4.0f);
  std::vector<float> gy(16, 1.0f);
  std::vector<float> gx(4);
  upsample2x_backward(gy.data(), 1, 2, 2, gx.data());
  for (const float v : gx) CHECK(v == 4.0f);
}

TEST_CASE("full toy gradcheck in double precision clears 1e-4") {
  const GradCheckReport report = run_gradcheck("toy", /*double_precision=*/true);
  for (const GradCheckEntry& e : report.per_layer) {
    CAPTURE(e.layer_type);
    CHECK(e.max_rel_err < 1e-4);
  }
  CHECK(report.pass(1e-4));
  CHECK(report.runtime_seconds < 120.0);
  // Every layer family of the descriptor shows up in the report.
  auto has = [&](const char* t) {
    for (const GradCheckEntry& e : report.per_layer) {
      if (e.layer_type == t) return true;
    }
    return false;
  };
  CHECK(has("conv"));
  CHECK(has("pyramid_lateral"));
  CHECK(has("branch_conv"));
  CHECK(has("transposed_conv"));
  CHECK(has("head_1x1"));
  CHECK(has("log_std"));
}

TEST_CASE("double precision tightens the gradcheck error") {
  const GradCheckReport dp = run_gradcheck("toy", true);
  const GradCheckReport sp = run_gradcheck("toy", false);
  CHECK(dp.max_rel_err < sp.max_rel_err);
}

TEST_CASE("checkpoint round-trips parameters and descriptor") {
  const NetworkDescriptor desc = NetworkDescriptor::preset("toy16");
  NetworkParams<float> params = init_params<float>(desc, 21);
  const std::string path =
      (std::filesystem::temp_directory_path() / "pixgrasp_ckpt_test.pxgr")
          .string();
  std::map<std::string, Tensor<float>> extra;
  Tensor<float> meta({3});
  meta.data = {1.0f, 2.0f, 3.0f};
  extra["meta"] = meta;
  save_checkpoint(path, params, extra);

  std::map<std::string, Tensor<float>> extra_back;
  const NetworkParams<float> back = load_checkpoint(path, &extra_back);
  CHECK(back.descriptor.serialize() == desc.serialize());
  REQUIRE(extra_back.count("meta") == 1);
  CHECK(extra_back.at("meta").data == meta.data);
  for (const auto& [name, t] : params.tensors) {
    REQUIRE(back.tensors.count(name) == 1);
    CHECK(back.at(name).data == t.data);
  }

  // Corrupt magic must be rejected.
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("NOPE", 4);
  }
  CHECK_THROWS(load_checkpoint(path));
  std::filesystem::remove(path);
}

TEST_CASE("descriptor text round-trips") {
  const NetworkDescriptor desc = NetworkDescriptor::preset("desk64");
  const NetworkDescriptor back = NetworkDescriptor::parse(desc.serialize());
  CHECK(back.serialize() == desc.serialize());
  CHECK(back.resolution == 64);
  CHECK(back.encoder.size() == 4);
}
