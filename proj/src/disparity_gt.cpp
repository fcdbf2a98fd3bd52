// SPDX-License-Identifier: Apache-2.0
#include "stereodet/disparity_gt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>

#include "stereodet/error.hpp"

namespace stereodet {

std::size_t SparseDisparityMap::valid_count() const {
  return static_cast<std::size_t>(std::count_if(values.begin(), values.end(), [](float v) { return v >= 0.0f; }));
}

Tensor SparseDisparityMap::to_tensor() const { return Tensor({height, width}, values); }

void validate_block_match(const GrayImage& left, const GrayImage& right, const BlockMatchParams& p) {
  if (left.width != right.width || left.height != right.height) {
    throw InputError("block matching needs equal image sizes, got " + std::to_string(left.width) + "x" +
                     std::to_string(left.height) + " and " + std::to_string(right.width) + "x" +
                     std::to_string(right.height));
  }
  if (p.window < 3 || p.window % 2 == 0) throw InputError("block matching window must be odd and >= 3");
  if (p.search_range < 1 || p.search_range >= left.width) {
    throw InputError("search range must lie in [1, width), got " + std::to_string(p.search_range));
  }
  if (!(p.uniqueness_ratio > 0 && p.uniqueness_ratio <= 1)) throw InputError("uniqueness ratio must lie in (0, 1]");
  if (p.lr_tolerance < 0) throw InputError("left-right tolerance must be non-negative");
  if (left.height < p.window) throw InputError("image is shorter than the matching window");
}

namespace {

constexpr std::int32_t kNoCost = -1;

// cost[d * W + x] = SAD between the left window at x and the right window at
// x - d, centred on row y; kNoCost where a window leaves the image.
void row_costs(const GrayImage& L, const GrayImage& R, int y, int half, int D, std::vector<std::int32_t>& cost,
               std::vector<std::int32_t>& col) {
  const int W = L.width;
  cost.assign(static_cast<std::size_t>(D + 1) * W, kNoCost);
  col.assign(static_cast<std::size_t>(W), 0);
  for (int d = 0; d <= D; ++d) {
    std::fill(col.begin(), col.end(), 0);
    for (int yy = y - half; yy <= y + half; ++yy) {
      const std::uint8_t* l = &L.pixels[static_cast<std::size_t>(yy) * W];
      const std::uint8_t* r = &R.pixels[static_cast<std::size_t>(yy) * W];
      for (int x = d; x < W; ++x) col[static_cast<std::size_t>(x)] += std::abs(int(l[x]) - int(r[x - d]));
    }
    std::int32_t* out = &cost[static_cast<std::size_t>(d) * W];
    const int x0 = d + half;
    if (x0 + half >= W) continue;
    std::int32_t s = 0;
    for (int x = x0 - half; x <= x0 + half; ++x) s += col[static_cast<std::size_t>(x)];
    out[x0] = s;
    for (int x = x0 + 1; x + half < W; ++x) {
      s += col[static_cast<std::size_t>(x + half)] - col[static_cast<std::size_t>(x - half - 1)];
      out[x] = s;
    }
  }
}

void right_row(const std::vector<std::int32_t>& cost, int W, int half, int D, int* out) {
  for (int xr = half; xr < W - half; ++xr) {
    std::int32_t best = std::numeric_limits<std::int32_t>::max();
    int arg = -1;
    for (int d = 0; d <= D && xr + d + half < W; ++d) {
      const std::int32_t c = cost[static_cast<std::size_t>(d) * W + xr + d];
      if (c < best) {
        best = c;
        arg = d;
      }
    }
    out[xr] = arg;
  }
}

}  // namespace

std::vector<int> right_view_disparity(const GrayImage& left, const GrayImage& right, const BlockMatchParams& p) {
  validate_block_match(left, right, p);
  const int W = left.width, H = left.height, half = p.window / 2, D = p.search_range;
  std::vector<int> out(static_cast<std::size_t>(W) * H, -1);
#pragma omp parallel
  {
    std::vector<std::int32_t> cost, col;
#pragma omp for schedule(dynamic)
    for (int y = half; y < H - half; ++y) {
      row_costs(left, right, y, half, D, cost, col);
      right_row(cost, W, half, D, &out[static_cast<std::size_t>(y) * W]);
    }
  }
  return out;
}

SparseDisparityMap block_match(const GrayImage& left, const GrayImage& right, const BlockMatchParams& p) {
  validate_block_match(left, right, p);
  const int W = left.width, H = left.height, half = p.window / 2, D = p.search_range;
  SparseDisparityMap map{W, H, p.window, D,
                         std::vector<float>(static_cast<std::size_t>(W) * H, SparseDisparityMap::kInvalid)};
#pragma omp parallel
  {
    std::vector<std::int32_t> cost, col;
    std::vector<int> rdisp(static_cast<std::size_t>(W), -1);
#pragma omp for schedule(dynamic)
    for (int y = half; y < H - half; ++y) {
      row_costs(left, right, y, half, D, cost, col);
      right_row(cost, W, half, D, rdisp.data());
      float* out = &map.values[static_cast<std::size_t>(y) * W];
      for (int x = half + D; x < W - half; ++x) {
        int arg = 0;
        for (int d = 1; d <= D; ++d) {
          if (cost[static_cast<std::size_t>(d) * W + x] < cost[static_cast<std::size_t>(arg) * W + x]) arg = d;
        }
        std::int32_t second = std::numeric_limits<std::int32_t>::max();
        for (int d = 0; d <= D; ++d) {
          if (std::abs(d - arg) > 1) second = std::min(second, cost[static_cast<std::size_t>(d) * W + x]);
        }
        const std::int32_t best = cost[static_cast<std::size_t>(arg) * W + x];
        if (second != std::numeric_limits<std::int32_t>::max() &&
            static_cast<double>(best) >= p.uniqueness_ratio * static_cast<double>(second)) {
          continue;
        }
        const int rd = rdisp[static_cast<std::size_t>(x - arg)];
        if (rd < 0 || std::abs(rd - arg) > p.lr_tolerance) continue;
        out[x] = static_cast<float>(arg);
      }
    }
  }
  return map;
}

SparseDisparityMap downscale_disparity(const SparseDisparityMap& map, int factor) {
  if (factor != 2 && factor != 4 && factor != 8 && factor != 16) {
    throw InputError("downscale factor must be 2, 4, 8 or 16, got " + std::to_string(factor));
  }
  const int ow = (map.width + factor - 1) / factor;
  const int oh = (map.height + factor - 1) / factor;
  SparseDisparityMap out{ow, oh, map.window, map.search_range,
                         std::vector<float>(static_cast<std::size_t>(ow) * oh, SparseDisparityMap::kInvalid)};
  std::vector<float> block;
  for (int by = 0; by < oh; ++by) {
    for (int bx = 0; bx < ow; ++bx) {
      block.clear();
      for (int y = by * factor; y < std::min(map.height, (by + 1) * factor); ++y) {
        for (int x = bx * factor; x < std::min(map.width, (bx + 1) * factor); ++x) {
          if (map.valid(x, y)) block.push_back(map.at(x, y));
        }
      }
      if (block.empty()) continue;
      std::sort(block.begin(), block.end());
      const std::size_t n = block.size();
      const double median = n % 2 ? block[n / 2] : 0.5 * (double(block[n / 2 - 1]) + double(block[n / 2]));
      // Sorted ascending, so the first minimum breaks ties toward the smaller value.
      float pick = block[0];
      double dist = std::abs(block[0] - median);
      for (float v : block) {
        if (std::abs(v - median) < dist) {
          dist = std::abs(v - median);
          pick = v;
        }
      }
      out.values[static_cast<std::size_t>(by) * ow + bx] = pick / static_cast<float>(factor);
    }
  }
  return out;
}

void write_disparity_png(const SparseDisparityMap& map, const std::filesystem::path& path) {
  std::vector<std::uint16_t> px(map.values.size(), 0);
  for (std::size_t i = 0; i < px.size(); ++i) {
    const float v = map.values[i];
    if (v < 0.0f) continue;
    px[i] = static_cast<std::uint16_t>(std::min(65535.0, std::round(double(v) * 256.0)));
  }
  write_png16(map.width, map.height, px, path);
}

SparseDisparityMap read_disparity_png(const std::filesystem::path& path) {
  SparseDisparityMap map;
  const std::vector<std::uint16_t> px = read_png16(path, map.width, map.height);
  map.values.resize(px.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    map.values[i] = px[i] == 0 ? SparseDisparityMap::kInvalid : static_cast<float>(px[i] / 256.0);
  }
  return map;
}

}  // namespace stereodet
