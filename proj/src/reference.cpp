// SPDX-License-Identifier: Apache-2.0
#include "stereodet/reference.hpp"

#include <cmath>
#include <cstdlib>
#include <limits>
#include <vector>

#include "stereodet/error.hpp"

namespace stereodet::reference {

Tensor conv2d(const Tensor& input, const Tensor& weights, std::span<const float> bias, const Conv2dParams& p) {
  validate_conv2d(input, weights, bias, p);
  const std::int64_t B = input.batch(), Cin = input.channels(), H = input.height(), W = input.width();
  const std::int64_t Cout = weights.dim(0), Kh = weights.dim(2), Kw = weights.dim(3);
  const std::int64_t Ho = conv_out_extent(H, Kh, p.stride, p.padding);
  const std::int64_t Wo = conv_out_extent(W, Kw, p.stride, p.padding);
  const std::int64_t cin_g = Cin / p.groups, cout_g = Cout / p.groups;
  Tensor out({B, Cout, Ho, Wo});
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t co = 0; co < Cout; ++co)
      for (std::int64_t oy = 0; oy < Ho; ++oy)
        for (std::int64_t ox = 0; ox < Wo; ++ox) {
          float acc = bias.empty() ? 0.0f : bias[static_cast<std::size_t>(co)];
          const std::int64_t g = co / cout_g;
          for (std::int64_t ci = 0; ci < cin_g; ++ci)
            for (std::int64_t ky = 0; ky < Kh; ++ky)
              for (std::int64_t kx = 0; kx < Kw; ++kx) {
                const std::int64_t iy = oy * p.stride - p.padding + ky;
                const std::int64_t ix = ox * p.stride - p.padding + kx;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += weights.at(co, ci, ky, kx) * input.at(b, g * cin_g + ci, iy, ix);
              }
          out.at(b, co, oy, ox) = acc;
        }
  return out;
}

namespace {

void check_pair(const Tensor& left, const Tensor& right, int max_disp) {
  require_rank4(left, "left features");
  require_rank4(right, "right features");
  if (left.shape() != right.shape()) {
    throw ShapeError("left " + to_string(left.shape()) + " and right " + to_string(right.shape()) + " differ");
  }
  if (max_disp < 1) throw ShapeError("max_disp must be >= 1");
}

}  // namespace

CostVolume correlation_volume(const Tensor& left, const Tensor& right, int max_disp) {
  check_pair(left, right, max_disp);
  const std::int64_t B = left.batch(), C = left.channels(), H = left.height(), W = left.width();
  CostVolume vol{CostVolumeKind::kCorrelation, max_disp, Tensor({B, max_disp, H, W})};
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t d = 0; d < max_disp; ++d)
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = d; x < W; ++x) {
          float dot = 0, nl = 0, nr = 0;
          for (std::int64_t c = 0; c < C; ++c) {
            const float l = left.at(b, c, y, x), r = right.at(b, c, y, x - d);
            dot += l * r;
            nl += l * l;
            nr += r * r;
          }
          const float denom = std::sqrt(nl) * std::sqrt(nr);
          vol.data.at(b, d, y, x) = denom > 0.0f ? dot / denom : 0.0f;
        }
  return vol;
}

CostVolume concatenation_volume(const Tensor& left, const Tensor& right, int max_disp) {
  check_pair(left, right, max_disp);
  const std::int64_t B = left.batch(), C = left.channels(), H = left.height(), W = left.width();
  CostVolume vol{CostVolumeKind::kConcatenation, max_disp, Tensor({B, 2 * C, max_disp, H, W})};
  float* o = vol.data.data();
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < 2 * C; ++c)
      for (std::int64_t d = 0; d < max_disp; ++d)
        for (std::int64_t y = 0; y < H; ++y)
          for (std::int64_t x = 0; x < W; ++x) {
            float v = 0.0f;
            if (c < C) {
              v = left.at(b, c, y, x);
            } else if (x - d >= 0) {
              v = right.at(b, c - C, y, x - d);
            }
            o[(((b * 2 * C + c) * max_disp + d) * H + y) * W + x] = v;
          }
  return vol;
}

namespace {

long sad(const GrayImage& a, int ax, const GrayImage& b, int bx, int y, int half) {
  long s = 0;
  for (int dy = -half; dy <= half; ++dy)
    for (int dx = -half; dx <= half; ++dx) s += std::abs(int(a.at(ax + dx, y + dy)) - int(b.at(bx + dx, y + dy)));
  return s;
}

}  // namespace

SparseDisparityMap block_match(const GrayImage& left, const GrayImage& right, const BlockMatchParams& params) {
  validate_block_match(left, right, params);
  const int W = left.width, H = left.height, half = params.window / 2, D = params.search_range;
  SparseDisparityMap map{W, H, params.window, D, std::vector<float>(static_cast<std::size_t>(W) * H, -1.0f)};

  // Right view, winner-take-all.
  std::vector<int> rdisp(static_cast<std::size_t>(W) * H, -1);
  for (int y = half; y < H - half; ++y)
    for (int xr = half; xr < W - half; ++xr) {
      long best = std::numeric_limits<long>::max();
      int arg = -1;
      for (int d = 0; d <= D && xr + d + half < W; ++d) {
        const long c = sad(left, xr + d, right, xr, y, half);
        if (c < best) {
          best = c;
          arg = d;
        }
      }
      rdisp[static_cast<std::size_t>(y) * W + xr] = arg;
    }

  for (int y = half; y < H - half; ++y)
    for (int x = half + D; x < W - half; ++x) {
      std::vector<long> cost(static_cast<std::size_t>(D) + 1);
      for (int d = 0; d <= D; ++d) cost[static_cast<std::size_t>(d)] = sad(left, x, right, x - d, y, half);
      int arg = 0;
      for (int d = 1; d <= D; ++d)
        if (cost[static_cast<std::size_t>(d)] < cost[static_cast<std::size_t>(arg)]) arg = d;
      long second = std::numeric_limits<long>::max();
      for (int d = 0; d <= D; ++d)
        if (std::abs(d - arg) > 1) second = std::min(second, cost[static_cast<std::size_t>(d)]);
      const long best = cost[static_cast<std::size_t>(arg)];
      if (second != std::numeric_limits<long>::max() &&
          static_cast<double>(best) >= params.uniqueness_ratio * static_cast<double>(second))
        continue;
      const int rd = rdisp[static_cast<std::size_t>(y) * W + (x - arg)];
      if (rd < 0 || std::abs(rd - arg) > params.lr_tolerance) continue;
      map.values[static_cast<std::size_t>(y) * W + x] = static_cast<float>(arg);
    }
  return map;
}

}  // namespace stereodet::reference
