// SPDX-License-Identifier: Apache-2.0
#pragma once

// Serial, loop-per-output reference kernels. They define the expected
// results of the parallel kernels (which must match them bit for bit) and
// are the baseline of the kernel benchmark.

#include <span>

#include "stereodet/disparity_gt.hpp"
#include "stereodet/ops.hpp"
#include "stereodet/stereo_matching.hpp"

namespace stereodet::reference {

Tensor conv2d(const Tensor& input, const Tensor& weights, std::span<const float> bias, const Conv2dParams& params = {});

CostVolume correlation_volume(const Tensor& left, const Tensor& right, int max_disp);
CostVolume concatenation_volume(const Tensor& left, const Tensor& right, int max_disp);

/// Recomputes every window sum from scratch.
SparseDisparityMap block_match(const GrayImage& left, const GrayImage& right, const BlockMatchParams& params = {});

}  // namespace stereodet::reference
