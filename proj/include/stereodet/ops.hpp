// SPDX-License-Identifier: Apache-2.0
#pragma once

// OpenMP-parallel forward kernels. Each output element is accumulated in a
// fixed order by exactly one thread, so results are bit-identical for any
// thread count. Serial reference versions live in reference.hpp.

#include <functional>
#include <span>
#include <vector>

#include "stereodet/tensor.hpp"

namespace stereodet {

struct Conv2dParams {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

/// Output extent of a convolution along one axis.
std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel, int stride, int padding);

/// Throws ShapeError naming the offending dimension.
void validate_conv2d(const Tensor& input, const Tensor& weights, std::span<const float> bias,
                     const Conv2dParams& params);

/// Cross-correlation with zero padding. `weights` is [Cout, Cin/groups, Kh, Kw];
/// `bias` is empty (treated as zeros) or has Cout entries.
Tensor conv2d(const Tensor& input, const Tensor& weights, std::span<const float> bias,
              const Conv2dParams& params = {});

/// out[b,c,y,x] = in[b,c,y,x] * scale[c] + shift[c]  (inference-mode batch norm).
Tensor affine_norm(const Tensor& input, std::span<const float> scale, std::span<const float> shift);

Tensor relu(Tensor input);

/// Bilinear resampling, align_corners = false.
Tensor resample_bilinear(const Tensor& input, std::int64_t out_h, std::int64_t out_w);

Tensor concat_channels(const std::vector<std::reference_wrapper<const Tensor>>& parts);

/// Channels [begin, end) of a 4-D tensor.
Tensor slice_channels(const Tensor& input, std::int64_t begin, std::int64_t end);

/// Numerically stable softmax along `axis` (negative counts from the back).
Tensor softmax_axis(const Tensor& input, int axis);

/// 2x2 average pooling with stride 2 (odd trailing row/column dropped).
Tensor avg_pool2x2(const Tensor& input);

/// Rows [top, H) of a 4-D tensor.
Tensor crop_rows(const Tensor& input, std::int64_t top);

/// Elementwise sum of two equally shaped tensors.
Tensor add(const Tensor& a, const Tensor& b);

// --- layer bundles -------------------------------------------------------

struct ConvLayer {
  Tensor weight;  // [Cout, Cin/groups, Kh, Kw]
  std::vector<float> bias;
  Conv2dParams params;

  std::int64_t out_channels() const { return weight.dim(0); }
};

struct AffineNorm {
  std::vector<float> scale;
  std::vector<float> shift;
};

Tensor apply(const ConvLayer& layer, const Tensor& input);
Tensor apply(const AffineNorm& norm, const Tensor& input);

/// relu(norm(conv(x)))
Tensor conv_norm_relu(const ConvLayer& conv, const AffineNorm& norm, const Tensor& input);

}  // namespace stereodet
