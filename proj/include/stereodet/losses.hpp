// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "stereodet/tensor.hpp"

namespace stereodet {

/// Per-pixel soft disparity target, stored [D, H, W] to line up with the
/// disparity decoder's channel-first logits.
struct DisparityDistributionTarget {
  int depth = 0;  // hypotheses D
  int height = 0;
  int width = 0;
  double sigma = 0.5;
  std::vector<double> probs;         // [D, H, W]; zero on invalid pixels
  std::vector<std::uint8_t> valid;   // [H, W]

  double prob(int d, int y, int x) const {
    return probs[(static_cast<std::size_t>(d) * height + y) * width + x];
  }
  std::size_t valid_count() const;
};

/// P(d) = softmax_d(-|d - d_gt| / sigma). `ground_truth` is [H, W] (or any
/// shape ending in H, W with unit leading dims); negative or non-finite
/// entries are invalid.
DisparityDistributionTarget disparity_target(const Tensor& ground_truth, int depth, double sigma = 0.5);

/// Sign of the focus exponent: kAsPrinted weights entries by (1 - P)^(-alpha),
/// kConventional by (1 - P)^(+alpha).
enum class FocusSign { kAsPrinted, kConventional };

struct StereoFocalOptions {
  double alpha = 0.0;
  FocusSign sign = FocusSign::kAsPrinted;
};

struct LossResult {
  double loss = 0;
  std::vector<double> grad;
};

/// Mean over valid pixels of sum_d w(P) * (-P log softmax(logits)). The
/// weights depend only on the target and are constant in the gradient.
/// `logits` is [D, H, W]. Throws InvariantError on an empty valid mask.
LossResult stereo_focal_loss(std::span<const double> logits, const DisparityDistributionTarget& target,
                             const StereoFocalOptions& options = {});

struct TensorLossResult {
  double loss = 0;
  Tensor grad;
};

/// Same, for decoder logits shaped [1, D, H, W] or [D, H, W].
TensorLossResult stereo_focal_loss(const Tensor& logits, const DisparityDistributionTarget& target,
                                   const StereoFocalOptions& options = {});

struct FocalOptions {
  double gamma = 2.0;
  double alpha = 0.25;
};

struct ScalarLoss {
  double loss = 0;
  double grad = 0;  // d loss / d logit
};

/// Sigmoid focal loss for one logit and a {0, 1} label.
ScalarLoss focal_loss(double logit, int label, const FocalOptions& options = {});

/// Sum of per-element focal losses.
LossResult focal_loss(std::span<const double> logits, std::span<const int> labels,
                      const FocalOptions& options = {});

/// Mean smooth-L1 over elements. The gradient is of the mean.
LossResult smooth_l1(std::span<const double> pred, std::span<const double> target, double beta = 1.0 / 9.0);

/// Unweighted sum; throws InvariantError naming any non-finite component.
double total_loss(double classification, double regression, double disparity);

}  // namespace stereodet
