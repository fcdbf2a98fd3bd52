// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>

#include "stereodet/ops.hpp"
#include "stereodet/trace.hpp"

namespace stereodet {

enum class CostVolumeKind { kCorrelation, kConcatenation };

/// Correlation data is [B, D, H, W]; concatenation data is [B, 2C, D, H, W].
/// Hypothesis d pairs left pixel x with right pixel x - d.
struct CostVolume {
  CostVolumeKind kind = CostVolumeKind::kCorrelation;
  int max_disp = 0;
  Tensor data;
};

/// Cosine similarity over channels between L[:, y, x] and R[:, y, x-d].
/// Out-of-range shifts and zero-norm vectors give 0. `max_disp` may exceed
/// W; hypotheses d >= W are all zero.
CostVolume correlation_volume(const Tensor& left, const Tensor& right, int max_disp);

/// Left features in channels [0, C), right features shifted by d in [C, 2C),
/// zero where x - d < 0.
CostVolume concatenation_volume(const Tensor& left, const Tensor& right, int max_disp);

/// [B, 2C, D, H, W] -> [B, 2C*D, H, W]; a view change, no data movement.
Tensor flatten_volume(const CostVolume& volume);

// --- densely connected ghost module -------------------------------------

struct GhostParams {
  ConvLayer primary;  // 1x1, C -> C
  AffineNorm primary_norm;
  ConvLayer cheap;    // depthwise 3x3, C -> C, groups = C
  AffineNorm cheap_norm;
};

/// concat(x, relu(norm(pointwise(x))), relu(norm(depthwise(primary)))):
/// three times the input channels, the first C of them equal to the input.
Tensor ghost_dense_forward(const Tensor& input, const GhostParams& params, ForwardTrace* trace = nullptr,
                           const std::string& name = "ghost");

// --- hierarchical multi-scale fusion --------------------------------------

struct FusionConfig {
  int max_disp4 = 96;        // correlation hypotheses at 1/4
  int max_disp8 = 192;       // correlation hypotheses at 1/8
  int max_disp16 = 24;       // concatenation hypotheses at 1/16
  int reduce16_channels = 16;
  int down4_channels = 64;   // learned stride-2 downsample widths
  int down8_channels = 128;

  /// Channel count of the fused 1/16 feature. `learned_down` selects the
  /// stride-2 convolution widths; otherwise average pooling keeps channels.
  std::int64_t fused_channels(bool learned_down = true) const;
};

struct FusionParams {
  GhostParams ghost4;              // over max_disp4 channels
  std::optional<ConvLayer> down4;  // 3x3 stride 2; average pooling when absent
  GhostParams ghost8;              // over down4 + max_disp8 channels
  std::optional<ConvLayer> down8;
  ConvLayer reduce16;              // 1x1, C16 -> reduce16_channels
};

struct PyramidLevel {
  Tensor left;
  Tensor right;
};

/// Builds the stereo feature at 1/16 from the 1/4, 1/8 and 1/16 feature pairs:
///   corr(96)@4 -> ghost -> down -> ++corr(192)@8 -> ghost -> down
///   -> ++ flattened concat volume of 1x1-reduced features @16.
/// Every intermediate shape is recorded in `trace` under the "fusion." prefix.
Tensor hierarchical_fusion_forward(const PyramidLevel& feat4, const PyramidLevel& feat8,
                                   const PyramidLevel& feat16, const FusionParams& params,
                                   const FusionConfig& config, ForwardTrace* trace = nullptr);

// --- cost-volume benchmark -------------------------------------------------

struct CostVolumeBenchReport {
  Shape shape;
  int max_disp = 0;
  int repetitions = 0;
  int threads = 1;
  double correlation_median_ms = 0;
  double correlation_min_ms = 0;
  double concatenation_median_ms = 0;
  double concatenation_min_ms = 0;
  /// concatenation median / correlation median
  double ratio = 0;

  std::string to_text() const;
  std::string to_json() const;
};

/// Times both constructions on identical random inputs generated outside the
/// timed region. Runs with `threads` OpenMP threads (1 by default).
CostVolumeBenchReport bench_cost_volumes(const Shape& shape, int max_disp, int repetitions, int threads = 1,
                                         unsigned seed = 7);

}  // namespace stereodet
