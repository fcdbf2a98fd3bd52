// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "stereodet/image.hpp"
#include "stereodet/types.hpp"

namespace stereodet {

/// Rectified pair with KITTI-like intrinsics: fx = 721.5377, 0.54 m baseline.
CalibrationPair kitti_like_calibration();

struct SyntheticFrame {
  Image left;
  Image right;
  std::vector<ObjectAnnotation> annotations;
  CalibrationPair calib;
};

struct SyntheticOptions {
  int width = 1242;
  int height = 375;
  int max_objects = 4;
  int disparity = 8;  // right(x) = left(x + disparity)
};

/// Random texture pair plus ground-plane cars whose 2D boxes are the clipped
/// projections of their 3D corners. Deterministic in `seed`.
SyntheticFrame make_synthetic_frame(std::uint64_t seed, const SyntheticOptions& options = {});

/// Uniform-noise luminance pair with right(x) = left(x + shift).
std::pair<GrayImage, GrayImage> make_shift_pair(std::uint64_t seed, int width, int height, int shift);

/// Zero-padded six-digit KITTI frame id.
std::string frame_id(int index);

/// Writes image_2/, image_3/ (PNG), label_2/ and calib/ entries for one frame.
void write_kitti_frame(const std::filesystem::path& root, const std::string& id, const SyntheticFrame& frame);

/// Writes `count` frames and a split file `split.txt` listing their ids.
void write_synthetic_dataset(const std::filesystem::path& root, int count, std::uint64_t seed,
                             const SyntheticOptions& options = {});

}  // namespace stereodet
