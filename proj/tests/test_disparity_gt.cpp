// SPDX-License-Identifier: Apache-2.0
#include <filesystem>
#include <random>
#include <unistd.h>

#include "doctest.h"
#include "oracles.hpp"
#include "stereodet/disparity_gt.hpp"
#include "stereodet/error.hpp"
#include "stereodet/parallel.hpp"
#include "stereodet/reference.hpp"
#include "stereodet/synthetic.hpp"

using namespace stereodet;
namespace fs = std::filesystem;

namespace {

BlockMatchParams small_params(int window = 5, int range = 12) {
  BlockMatchParams p;
  p.window = window;
  p.search_range = range;
  return p;
}

SparseDisparityMap map_of(int w, int h, std::vector<float> v) { return SparseDisparityMap{w, h, 3, 100, std::move(v)}; }

}  // namespace

TEST_CASE("block_match: zero shift gives zero disparity") {
  const auto [l, r] = make_shift_pair(1, 64, 24, 0);
  const auto m = block_match(l, r, small_params());
  CHECK(m.valid_count() > 0);
  for (float v : m.values) CHECK((v == 0.0f || v == -1.0f));
}

TEST_CASE("block_match: synthetic shift recovered on >= 95% of valid interior pixels") {
  for (int k : {1, 4, 7, 11}) {
    const auto [l, r] = make_shift_pair(10 + k, 96, 32, k);
    const auto m = block_match(l, r, small_params(5, 16));
    std::size_t valid = 0, hit = 0;
    for (int y = 0; y < m.height; ++y)
      for (int x = 0; x < m.width - k; ++x)  // right image has no data past W - k
        if (m.valid(x, y)) {
          ++valid;
          hit += m.at(x, y) == static_cast<float>(k);
        }
    REQUIRE(valid > 0);
    CHECK(double(hit) / double(valid) >= 0.95);
  }
}

TEST_CASE("block_match: textureless images are rejected by the uniqueness test") {
  const GrayImage flat(40, 20, 128);
  const auto m = block_match(flat, flat, small_params());
  CHECK(m.valid_count() == 0);
}

TEST_CASE("block_match: errors") {
  const GrayImage a(40, 20), b(41, 20);
  CHECK_THROWS_AS(block_match(a, b, small_params()), InputError);
  CHECK_THROWS_AS(block_match(a, a, small_params(4)), InputError);
  CHECK_THROWS_AS(block_match(a, a, small_params(1)), InputError);
  CHECK_THROWS_AS(block_match(a, a, small_params(5, 0)), InputError);
  CHECK_THROWS_AS(block_match(a, a, small_params(5, 40)), InputError);
  auto p = small_params();
  p.uniqueness_ratio = 0;
  CHECK_THROWS_AS(block_match(a, a, p), InputError);
}

TEST_CASE("block_match properties: range, border, LR consistency, oracle, reference, threads") {
  for (int trial = 0; trial < 12; ++trial) {
    const int shift = trial % 6;
    const auto [l, r] = make_shift_pair(100 + trial, 48 + trial, 16 + trial % 3, shift);
    BlockMatchParams p = small_params(3 + 2 * (trial % 3), 6 + trial % 5);
    p.uniqueness_ratio = 0.8 + 0.05 * (trial % 4);
    const auto m = block_match(l, r, p);
    const int half = p.window / 2;
    const auto rv = right_view_disparity(l, r, p);
    for (int y = 0; y < m.height; ++y)
      for (int x = 0; x < m.width; ++x) {
        const float v = m.at(x, y);
        CHECK((v == -1.0f || (v >= 0 && v <= p.search_range)));
        const bool inside = y >= half && y < m.height - half && x >= half + p.search_range && x < m.width - half;
        if (!inside) CHECK(v == -1.0f);
        if (v >= 0) {
          const int d = static_cast<int>(v);
          CHECK(d == oracle::sad_argmin(l, r, x, y, half, p.search_range));
          const int back = rv[static_cast<std::size_t>(y) * m.width + (x - d)];
          CHECK(back >= 0);
          CHECK(std::abs(back - d) <= p.lr_tolerance);
        }
      }
    CHECK(m == reference::block_match(l, r, p));
    for (int t : {2, 3}) {
      ScopedThreads s(t);
      CHECK(block_match(l, r, p) == m);
    }
  }
}

TEST_CASE("downscale_disparity") {
  const auto none = downscale_disparity(map_of(4, 4, std::vector<float>(16, -1.0f)), 2);
  CHECK(none.width == 2);
  CHECK(none.valid_count() == 0);

  const auto c = downscale_disparity(map_of(8, 8, std::vector<float>(64, 8.0f)), 4);
  CHECK(c.width == 2);
  CHECK(c.height == 2);
  for (float v : c.values) CHECK(v == 2.0f);

  // One 4x4 block holding {4, 4, 100, -1, ...invalid}.
  std::vector<float> mixed(16, -1.0f);
  mixed[0] = 4;
  mixed[5] = 4;
  mixed[10] = 100;
  const auto m = downscale_disparity(map_of(4, 4, mixed), 4);
  REQUIRE(m.values.size() == 1);
  CHECK(m.values[0] == 1.0f);

  // Ceil-sized output and partial edge blocks.
  const auto e = downscale_disparity(map_of(5, 3, std::vector<float>(15, 6.0f)), 2);
  CHECK(e.width == 3);
  CHECK(e.height == 2);
  for (float v : e.values) CHECK(v == 3.0f);
  CHECK_THROWS_AS(downscale_disparity(map_of(4, 4, mixed), 3), InputError);
}

TEST_CASE("disparity PNG roundtrip") {
  const fs::path dir = fs::temp_directory_path() / ("stereodet_disp_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  std::vector<float> v = {-1, 0.5f, 1.25f, 96, 3, -1};
  const auto m = map_of(3, 2, v);
  write_disparity_png(m, dir / "d.png");
  const auto back = read_disparity_png(dir / "d.png");
  CHECK(back.width == 3);
  CHECK(back.height == 2);
  CHECK(back.values == v);
  fs::remove_all(dir);
}
