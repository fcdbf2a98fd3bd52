// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <vector>

#include "stereodet/image.hpp"
#include "stereodet/tensor.hpp"

namespace stereodet {

struct BlockMatchParams {
  int window = 9;              // odd, >= 3
  int search_range = 96;       // largest disparity searched
  double uniqueness_ratio = 0.95;
  int lr_tolerance = 1;
};

/// Integer (or, after downscaling, fractional) disparities in pixels with
/// -1 marking invalid pixels.
struct SparseDisparityMap {
  static constexpr float kInvalid = -1.0f;

  int width = 0;
  int height = 0;
  int window = 0;
  int search_range = 0;
  std::vector<float> values;

  float at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  bool valid(int x, int y) const { return at(x, y) >= 0.0f; }
  std::size_t valid_count() const;

  /// [H, W] tensor view of the values.
  Tensor to_tensor() const;

  bool operator==(const SparseDisparityMap&) const = default;
};

/// Throws InputError on unequal image sizes or out-of-range parameters.
void validate_block_match(const GrayImage& left, const GrayImage& right, const BlockMatchParams& params);

/// SAD block matching of left against right (right pixel x - d). A pixel is
/// invalid when any window of the full search leaves the image, when the best
/// cost is not below uniqueness_ratio times the best cost at least two
/// hypotheses away, or when the right-to-left match disagrees by more than
/// lr_tolerance. Rows run in parallel.
SparseDisparityMap block_match(const GrayImage& left, const GrayImage& right, const BlockMatchParams& params = {});

/// Winner-take-all disparity of every right-image pixel (matching left pixel
/// x + d), -1 where no full window fits. Used by the consistency check.
std::vector<int> right_view_disparity(const GrayImage& left, const GrayImage& right, const BlockMatchParams& params);

/// Block-wise: the valid value nearest the block median, divided by factor.
/// Output is ceil(H / factor) x ceil(W / factor).
SparseDisparityMap downscale_disparity(const SparseDisparityMap& map, int factor);

/// KITTI convention: uint16 = round(d * 256), invalid -> 0.
void write_disparity_png(const SparseDisparityMap& map, const std::filesystem::path& path);
SparseDisparityMap read_disparity_png(const std::filesystem::path& path);

}  // namespace stereodet
