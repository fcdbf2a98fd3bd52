// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"
#include "stereodet/error.hpp"
#include "stereodet/parallel.hpp"
#include "stereodet/reference.hpp"
#include "stereodet/stereo_matching.hpp"

using namespace stereodet;

namespace {

AffineNorm random_norm(std::mt19937& rng, std::int64_t c) {
  std::uniform_real_distribution<float> s(0.5f, 1.5f), t(-0.2f, 0.2f);
  AffineNorm n;
  for (std::int64_t i = 0; i < c; ++i) {
    n.scale.push_back(s(rng));
    n.shift.push_back(t(rng));
  }
  return n;
}

ConvLayer random_conv(std::mt19937& rng, std::int64_t cout, std::int64_t cin, int k, int stride, int groups) {
  ConvLayer l;
  l.weight = oracle::random_tensor(rng, {cout, cin / groups, k, k}, -0.3f, 0.3f);
  std::uniform_real_distribution<float> b(-0.1f, 0.1f);
  for (std::int64_t i = 0; i < cout; ++i) l.bias.push_back(b(rng));
  l.params = {stride, k / 2, groups};
  return l;
}

GhostParams random_ghost(std::mt19937& rng, std::int64_t c) {
  return {random_conv(rng, c, c, 1, 1, 1), random_norm(rng, c), random_conv(rng, c, c, 3, 1, static_cast<int>(c)),
          random_norm(rng, c)};
}

FusionParams random_fusion(std::mt19937& rng, const FusionConfig& cfg, std::int64_t c16, bool learned) {
  FusionParams p;
  const std::int64_t g4 = cfg.max_disp4;
  p.ghost4 = random_ghost(rng, g4);
  const std::int64_t d4 = learned ? cfg.down4_channels : 3 * g4;
  if (learned) p.down4 = random_conv(rng, d4, 3 * g4, 3, 2, 1);
  const std::int64_t g8 = d4 + cfg.max_disp8;
  p.ghost8 = random_ghost(rng, g8);
  if (learned) p.down8 = random_conv(rng, cfg.down8_channels, 3 * g8, 3, 2, 1);
  p.reduce16 = random_conv(rng, cfg.reduce16_channels, c16, 1, 1, 1);
  return p;
}

struct Pyramid {
  PyramidLevel l4, l8, l16;
};

Pyramid random_pyramid(std::mt19937& rng, std::int64_t h4, std::int64_t w4, std::int64_t c, bool identical) {
  Pyramid p;
  auto level = [&](std::int64_t ch, std::int64_t h, std::int64_t w) {
    PyramidLevel l{oracle::random_tensor(rng, {1, ch, h, w}), Tensor()};
    l.right = identical ? l.left : oracle::random_tensor(rng, {1, ch, h, w});
    return l;
  };
  p.l4 = level(c, h4, w4);
  p.l8 = level(2 * c, h4 / 2, w4 / 2);
  p.l16 = level(4 * c, h4 / 4, w4 / 4);
  return p;
}

}  // namespace

TEST_CASE("correlation_volume examples") {
  std::mt19937 rng(1);
  const Tensor x = oracle::random_tensor(rng, {1, 8, 6, 10});
  const auto self = correlation_volume(x, x, 4);
  CHECK(self.data.shape() == Shape{1, 4, 6, 10});
  for (int y = 0; y < 6; ++y)
    for (int xx = 0; xx < 10; ++xx) {
      CHECK(self.data.at(0, 0, y, xx) == doctest::Approx(1.0).epsilon(1e-6));
      for (int d = xx + 1; d < 4; ++d) CHECK(self.data.at(0, d, y, xx) == 0.0f);
    }
  const Tensor r = oracle::random_tensor(rng, {1, 8, 6, 10});
  CHECK(oracle::max_rel_error(correlation_volume(x, r, 4).data, oracle::correlation(x, r, 4)) < 1e-5);
  CHECK_THROWS_AS(correlation_volume(x, Tensor({1, 8, 6, 9}), 4), ShapeError);
  CHECK_THROWS_AS(correlation_volume(x, r, 0), InputError);
  // Zero vectors correlate to 0, not NaN.
  const auto z = correlation_volume(Tensor({1, 3, 2, 2}), Tensor({1, 3, 2, 2}), 2);
  for (float v : z.data.values()) CHECK(v == 0.0f);
}

TEST_CASE("correlation property: oracle agreement and range on dims <= 16") {
  std::mt19937 rng(2);
  std::uniform_int_distribution<int> dim(1, 16);
  for (int trial = 0; trial < 150; ++trial) {
    const int C = dim(rng), H = dim(rng), W = dim(rng), D = 1 + static_cast<int>(rng() % W);
    const Tensor l = oracle::random_tensor(rng, {1 + trial % 2, C, H, W});
    const Tensor r = oracle::random_tensor(rng, {1 + trial % 2, C, H, W});
    const auto got = correlation_volume(l, r, D);
    CHECK(oracle::max_rel_error(got.data, oracle::correlation(l, r, D)) < 1e-5);
    for (float v : got.data.values()) {
      CHECK(v >= -1 - 1e-6);
      CHECK(v <= 1 + 1e-6);
    }
    CHECK(got.data == reference::correlation_volume(l, r, D).data);
  }
}

TEST_CASE("correlation hypotheses beyond the width are zero") {
  std::mt19937 rng(3);
  const Tensor l = oracle::random_tensor(rng, {1, 4, 3, 5});
  const auto v = correlation_volume(l, l, 8);
  CHECK(v.data.shape() == Shape{1, 8, 3, 5});
  for (int d = 5; d < 8; ++d)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 5; ++x) CHECK(v.data.at(0, d, y, x) == 0.0f);
}

TEST_CASE("correlation is not symmetric in its inputs") {
  std::mt19937 rng(4);
  const Tensor l = oracle::random_tensor(rng, {1, 4, 4, 8});
  const Tensor r = oracle::random_tensor(rng, {1, 4, 4, 8});
  CHECK_FALSE(correlation_volume(l, r, 3).data == correlation_volume(r, l, 3).data);
}

TEST_CASE("concatenation_volume") {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int C = 1 + trial % 5, H = 1 + trial % 7, W = 2 + trial % 9, D = 1 + trial % 6;
    const Tensor l = oracle::random_tensor(rng, {1, C, H, W});
    const Tensor r = oracle::random_tensor(rng, {1, C, H, W});
    const auto v = concatenation_volume(l, r, D);
    CHECK(v.data.shape() == Shape{1, 2 * C, D, H, W});
    {
      const auto want = oracle::concatenation(l, r, D);
      CHECK(std::equal(want.begin(), want.end(), v.data.values().begin(), v.data.values().end()));
    }
    CHECK(v.data == reference::concatenation_volume(l, r, D).data);
    const Tensor flat = flatten_volume(v);
    CHECK(flat.shape() == Shape{1, 2 * C * D, H, W});
  }
  const Tensor l({1, 2, 1, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  const Tensor r({1, 2, 1, 3}, std::vector<float>{7, 8, 9, 10, 11, 12});
  const auto v = concatenation_volume(l, r, 2);
  // d = 0 slab is the channel concatenation.
  CHECK(v.data.values()[0] == 1);
  CHECK(v.data.values()[2 * 3 * 2 + 0] == 7);
  // d = 1: right half shifted, zero at x = 0, left half intact.
  CHECK(v.data.values()[3] == 1);
  CHECK(v.data.values()[2 * 3 * 2 + 3] == 0);
  CHECK(v.data.values()[2 * 3 * 2 + 4] == 7);
  CHECK_THROWS_AS(concatenation_volume(l, Tensor({1, 3, 1, 3}), 2), ShapeError);
}

TEST_CASE("ghost_dense_forward") {
  std::mt19937 rng(6);
  const Tensor x = oracle::random_tensor(rng, {1, 6, 5, 7});
  const GhostParams p = random_ghost(rng, 6);
  const Tensor y = ghost_dense_forward(x, p);
  CHECK(y.shape() == Shape{1, 18, 5, 7});
  CHECK(slice_channels(y, 0, 6) == x);
  const Tensor primary = relu(affine_norm(conv2d(x, p.primary.weight, p.primary.bias, p.primary.params),
                                          p.primary_norm.scale, p.primary_norm.shift));
  const Tensor cheap = relu(affine_norm(conv2d(primary, p.cheap.weight, p.cheap.bias, p.cheap.params),
                                        p.cheap_norm.scale, p.cheap_norm.shift));
  CHECK(slice_channels(y, 6, 12) == primary);
  CHECK(slice_channels(y, 12, 18) == cheap);
  CHECK_THROWS_AS(ghost_dense_forward(oracle::random_tensor(rng, {1, 5, 5, 7}), p), ShapeError);
}

TEST_CASE("hierarchical fusion on a small pyramid") {
  FusionConfig cfg;
  cfg.max_disp4 = 6;
  cfg.max_disp8 = 10;
  cfg.max_disp16 = 3;
  cfg.reduce16_channels = 4;
  cfg.down4_channels = 8;
  cfg.down8_channels = 12;
  std::mt19937 rng(7);
  for (bool learned : {true, false}) {
    const Pyramid pyr = random_pyramid(rng, 16, 32, 4, false);
    const FusionParams params = random_fusion(rng, cfg, 16, learned);
    ForwardTrace t1;
    const Tensor out = hierarchical_fusion_forward(pyr.l4, pyr.l8, pyr.l16, params, cfg, &t1);
    CHECK(out.shape() == Shape{1, cfg.fused_channels(learned), 4, 8});
    CHECK(t1.find("fusion.corr4")->shape == Shape{1, 6, 16, 32});
    CHECK(t1.find("fusion.corr8")->shape == Shape{1, 10, 8, 16});
    CHECK(t1.find("fusion.concat16")->shape == Shape{1, 2 * 4 * 3, 4, 8});
    CHECK(t1.count_prefix("fusion.") == 14);
    for (int threads : {1, 2, 3}) {
      ScopedThreads s(threads);
      ForwardTrace t;
      CHECK(hierarchical_fusion_forward(pyr.l4, pyr.l8, pyr.l16, params, cfg, &t) == out);
      CHECK(t == t1);
    }
  }
  const Pyramid same = random_pyramid(rng, 16, 32, 4, true);
  const FusionParams params = random_fusion(rng, cfg, 16, true);
  CHECK_NOTHROW(hierarchical_fusion_forward(same.l4, same.l8, same.l16, params, cfg));
  const auto c4 = correlation_volume(same.l4.left, same.l4.right, cfg.max_disp4);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 32; ++x) CHECK(c4.data.at(0, 0, y, x) == doctest::Approx(1.0).epsilon(1e-6));
  Pyramid bad = same;
  bad.l8.left = bad.l8.right = oracle::random_tensor(rng, {1, 8, 7, 16});
  CHECK_THROWS_AS(hierarchical_fusion_forward(bad.l4, bad.l8, bad.l16, params, cfg), ShapeError);
}

TEST_CASE("hierarchical fusion at the KITTI shape records 96 and 192 hypotheses") {
  std::mt19937 rng(8);
  const FusionConfig cfg;
  PyramidLevel l4{oracle::random_tensor(rng, {1, 64, 72, 320}), Tensor()};
  l4.right = l4.left;
  PyramidLevel l8{oracle::random_tensor(rng, {1, 128, 36, 160}), Tensor()};
  l8.right = oracle::random_tensor(rng, {1, 128, 36, 160});
  PyramidLevel l16{oracle::random_tensor(rng, {1, 256, 18, 80}), Tensor()};
  l16.right = oracle::random_tensor(rng, {1, 256, 18, 80});
  const FusionParams params = random_fusion(rng, cfg, 256, true);
  ForwardTrace t;
  const Tensor out = hierarchical_fusion_forward(l4, l8, l16, params, cfg, &t);
  CHECK(t.find("fusion.corr4")->shape == Shape{1, 96, 72, 320});
  CHECK(t.find("fusion.corr8")->shape == Shape{1, 192, 36, 160});
  CHECK(t.find("fusion.ghost4")->shape == Shape{1, 288, 72, 320});
  CHECK(t.find("fusion.concat16")->shape == Shape{1, 768, 18, 80});
  CHECK(out.shape() == Shape{1, 896, 18, 80});
}

TEST_CASE("bench_cost_volumes") {
  CHECK_THROWS_AS(bench_cost_volumes({1, 2, 4, 4}, 2, 1), InputError);
  CHECK_THROWS_AS(bench_cost_volumes({1, 2, 4, 4}, 2, 2), InputError);
  const auto r = bench_cost_volumes({1, 2, 4, 4}, 2, 3);
  const auto j = nlohmann::json::parse(r.to_json());
  CHECK(j.at("max_disp").get<int>() == 2);
  CHECK(j.at("shape").get<std::vector<std::int64_t>>() == std::vector<std::int64_t>{1, 2, 4, 4});
  CHECK(j.at("results").size() == 2);
  CHECK(j.at("results")[0].at("kind") == "correlation");
  CHECK(j.at("results")[1].at("median_ms").get<double>() >= 0);
  CHECK(r.to_text().find("ratio") != std::string::npos);
}
