// SPDX-License-Identifier: Apache-2.0
#include "stereodet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "stereodet/error.hpp"

namespace stereodet {

std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel, int stride, int padding) {
  const std::int64_t span = in + 2 * padding - kernel;
  if (span < 0) return 0;
  return span / stride + 1;
}

void validate_conv2d(const Tensor& input, const Tensor& weights, std::span<const float> bias, const Conv2dParams& p) {
  require_rank4(input, "conv2d input");
  require_rank4(weights, "conv2d weights");
  if (p.stride < 1) throw ShapeError("conv2d stride must be >= 1, got " + std::to_string(p.stride));
  if (p.padding < 0) throw ShapeError("conv2d padding must be >= 0, got " + std::to_string(p.padding));
  if (p.groups < 1) throw ShapeError("conv2d groups must be >= 1, got " + std::to_string(p.groups));
  const auto cin = input.channels();
  const auto cout = weights.dim(0);
  if (cin % p.groups != 0) {
    throw ShapeError("conv2d input channels " + std::to_string(cin) + " not divisible by groups " +
                     std::to_string(p.groups));
  }
  if (cout % p.groups != 0) {
    throw ShapeError("conv2d output channels " + std::to_string(cout) + " not divisible by groups " +
                     std::to_string(p.groups));
  }
  if (weights.dim(1) != cin / p.groups) {
    throw ShapeError("conv2d weight input-channel dim is " + std::to_string(weights.dim(1)) + ", expected Cin/groups = " +
                     std::to_string(cin / p.groups));
  }
  if (!bias.empty() && static_cast<std::int64_t>(bias.size()) != cout) {
    throw ShapeError("conv2d bias has " + std::to_string(bias.size()) + " entries, expected Cout = " +
                     std::to_string(cout));
  }
  if (conv_out_extent(input.height(), weights.dim(2), p.stride, p.padding) < 1 ||
      conv_out_extent(input.width(), weights.dim(3), p.stride, p.padding) < 1) {
    throw ShapeError("conv2d kernel " + to_string(weights.shape()) + " larger than padded input " +
                     to_string(input.shape()));
  }
}

Tensor conv2d(const Tensor& input, const Tensor& weights, std::span<const float> bias, const Conv2dParams& p) {
  validate_conv2d(input, weights, bias, p);
  const std::int64_t B = input.batch(), Cin = input.channels(), H = input.height(), W = input.width();
  const std::int64_t Cout = weights.dim(0), Kh = weights.dim(2), Kw = weights.dim(3);
  const std::int64_t Ho = conv_out_extent(H, Kh, p.stride, p.padding);
  const std::int64_t Wo = conv_out_extent(W, Kw, p.stride, p.padding);
  const std::int64_t cin_g = Cin / p.groups, cout_g = Cout / p.groups;
  const int stride = p.stride, pad = p.padding;

  Tensor out({B, Cout, Ho, Wo});
  const float* in = input.data();
  const float* wt = weights.data();
  float* o = out.data();
  const std::int64_t rows = B * Cout * Ho;

  // One output row per task; every element accumulates bias, then (ci, ky, kx)
  // in ascending order, skipping taps that fall in the zero padding.
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::int64_t oy = r % Ho;
    const std::int64_t co = (r / Ho) % Cout;
    const std::int64_t b = r / (Ho * Cout);
    const std::int64_t g = co / cout_g;
    float* orow = o + r * Wo;
    const float init = bias.empty() ? 0.0f : bias[static_cast<std::size_t>(co)];
    for (std::int64_t ox = 0; ox < Wo; ++ox) orow[ox] = init;

    for (std::int64_t ci = 0; ci < cin_g; ++ci) {
      const float* plane = in + ((b * Cin + g * cin_g + ci) * H) * W;
      const float* wk = wt + ((co * cin_g + ci) * Kh) * Kw;
      for (std::int64_t ky = 0; ky < Kh; ++ky) {
        const std::int64_t iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= H) continue;
        const float* irow = plane + iy * W;
        for (std::int64_t kx = 0; kx < Kw; ++kx) {
          const float w = wk[ky * Kw + kx];
          // valid ox: 0 <= ox*stride - pad + kx < W
          const std::int64_t off = kx - pad;
          std::int64_t lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
          std::int64_t hi = (W - 1 - off) >= 0 ? (W - 1 - off) / stride + 1 : 0;
          hi = std::min(hi, Wo);
          if (lo >= hi) continue;
          if (stride == 1) {
            const float* src = irow + off;
            for (std::int64_t ox = lo; ox < hi; ++ox) orow[ox] += w * src[ox];
          } else {
            for (std::int64_t ox = lo; ox < hi; ++ox) orow[ox] += w * irow[ox * stride + off];
          }
        }
      }
    }
  }
  return out;
}

Tensor affine_norm(const Tensor& input, std::span<const float> scale, std::span<const float> shift) {
  require_rank4(input, "affine_norm input");
  const std::int64_t C = input.channels();
  if (static_cast<std::int64_t>(scale.size()) != C || static_cast<std::int64_t>(shift.size()) != C) {
    throw ShapeError("affine_norm expects " + std::to_string(C) + " scale/shift entries, got " +
                     std::to_string(scale.size()) + "/" + std::to_string(shift.size()));
  }
  Tensor out(input.shape());
  const std::int64_t plane = input.height() * input.width();
  const std::int64_t planes = input.batch() * C;
  const float* in = input.data();
  float* o = out.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p) {
    const std::size_t c = static_cast<std::size_t>(p % C);
    const float s = scale[c], t = shift[c];
    for (std::int64_t i = 0; i < plane; ++i) o[p * plane + i] = in[p * plane + i] * s + t;
  }
  return out;
}

Tensor relu(Tensor input) {
  float* d = input.data();
  const std::int64_t n = input.numel();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) d[i] = d[i] > 0.0f ? d[i] : 0.0f;
  return input;
}

Tensor resample_bilinear(const Tensor& input, std::int64_t out_h, std::int64_t out_w) {
  require_rank4(input, "resample_bilinear input");
  if (out_h < 1 || out_w < 1) {
    throw ShapeError("resample_bilinear output size must be positive, got " + std::to_string(out_h) + "x" +
                     std::to_string(out_w));
  }
  const std::int64_t H = input.height(), W = input.width();
  const std::int64_t planes = input.batch() * input.channels();
  Tensor out({input.batch(), input.channels(), out_h, out_w});

  struct Tap {
    std::int64_t i0, i1;
    float frac;
  };
  auto taps = [](std::int64_t in, std::int64_t n) {
    std::vector<Tap> t(static_cast<std::size_t>(n));
    const double scale = static_cast<double>(in) / static_cast<double>(n);
    for (std::int64_t i = 0; i < n; ++i) {
      double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
      if (src < 0) src = 0;
      std::int64_t i0 = static_cast<std::int64_t>(std::floor(src));
      if (i0 > in - 1) i0 = in - 1;
      const std::int64_t i1 = std::min(i0 + 1, in - 1);
      t[static_cast<std::size_t>(i)] = {i0, i1, static_cast<float>(src - static_cast<double>(i0))};
    }
    return t;
  };
  const auto ty = taps(H, out_h);
  const auto tx = taps(W, out_w);

  const float* in = input.data();
  float* o = out.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < planes * out_h; ++r) {
    const std::int64_t p = r / out_h, y = r % out_h;
    const Tap& vy = ty[static_cast<std::size_t>(y)];
    const float* row0 = in + (p * H + vy.i0) * W;
    const float* row1 = in + (p * H + vy.i1) * W;
    float* orow = o + r * out_w;
    for (std::int64_t x = 0; x < out_w; ++x) {
      const Tap& vx = tx[static_cast<std::size_t>(x)];
      const float top = std::lerp(row0[vx.i0], row0[vx.i1], vx.frac);
      const float bottom = std::lerp(row1[vx.i0], row1[vx.i1], vx.frac);
      orow[x] = std::lerp(top, bottom, vy.frac);
    }
  }
  return out;
}

Tensor concat_channels(const std::vector<std::reference_wrapper<const Tensor>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels needs at least one part");
  const Tensor& first = parts.front().get();
  require_rank4(first, "concat_channels part 0");
  const std::int64_t B = first.batch(), H = first.height(), W = first.width();
  std::int64_t C = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Tensor& t = parts[i].get();
    require_rank4(t, "concat_channels part");
    if (t.batch() != B || t.height() != H || t.width() != W) {
      throw ShapeError("concat_channels part " + std::to_string(i) + " has shape " + to_string(t.shape()) +
                       ", expected batch/height/width of " + to_string(first.shape()));
    }
    C += t.channels();
  }
  Tensor out({B, C, H, W});
  const std::int64_t plane = H * W;
  for (std::int64_t b = 0; b < B; ++b) {
    std::int64_t c0 = 0;
    for (const auto& ref : parts) {
      const Tensor& t = ref.get();
      const std::int64_t n = t.channels() * plane;
      std::memcpy(out.data() + (b * C + c0) * plane, t.data() + b * n, static_cast<std::size_t>(n) * sizeof(float));
      c0 += t.channels();
    }
  }
  return out;
}

Tensor slice_channels(const Tensor& input, std::int64_t begin, std::int64_t end) {
  require_rank4(input, "slice_channels input");
  if (begin < 0 || end > input.channels() || begin >= end) {
    throw ShapeError("slice_channels range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for " + to_string(input.shape()));
  }
  const std::int64_t B = input.batch(), C = input.channels(), plane = input.height() * input.width();
  Tensor out({B, end - begin, input.height(), input.width()});
  for (std::int64_t b = 0; b < B; ++b) {
    std::memcpy(out.data() + b * (end - begin) * plane, input.data() + (b * C + begin) * plane,
                static_cast<std::size_t>((end - begin) * plane) * sizeof(float));
  }
  return out;
}

Tensor softmax_axis(const Tensor& input, int axis) {
  const int rank = static_cast<int>(input.rank());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw ShapeError("softmax axis out of range for shape " + to_string(input.shape()));
  }
  const auto& s = input.shape();
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < rank; ++i) inner *= s[static_cast<std::size_t>(i)];
  const std::int64_t n = s[static_cast<std::size_t>(axis)];

  Tensor out(input.shape());
  const float* in = input.data();
  float* o = out.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < outer * inner; ++r) {
    const std::int64_t a = r / inner, i = r % inner;
    const float* src = in + a * n * inner + i;
    float* dst = o + a * n * inner + i;
    float mx = -std::numeric_limits<float>::infinity();
    for (std::int64_t k = 0; k < n; ++k) mx = std::max(mx, src[k * inner]);
    double sum = 0;
    for (std::int64_t k = 0; k < n; ++k) sum += std::exp(static_cast<double>(src[k * inner]) - mx);
    for (std::int64_t k = 0; k < n; ++k) {
      dst[k * inner] = static_cast<float>(std::exp(static_cast<double>(src[k * inner]) - mx) / sum);
    }
  }
  return out;
}

Tensor avg_pool2x2(const Tensor& input) {
  require_rank4(input, "avg_pool2x2 input");
  const std::int64_t H = input.height(), W = input.width();
  const std::int64_t Ho = H / 2, Wo = W / 2;
  if (Ho < 1 || Wo < 1) throw ShapeError("avg_pool2x2 input too small: " + to_string(input.shape()));
  const std::int64_t planes = input.batch() * input.channels();
  Tensor out({input.batch(), input.channels(), Ho, Wo});
  const float* in = input.data();
  float* o = out.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < planes * Ho; ++r) {
    const std::int64_t p = r / Ho, y = r % Ho;
    const float* a = in + (p * H + 2 * y) * W;
    const float* b = a + W;
    for (std::int64_t x = 0; x < Wo; ++x) {
      o[r * Wo + x] = ((a[2 * x] + a[2 * x + 1]) + (b[2 * x] + b[2 * x + 1])) * 0.25f;
    }
  }
  return out;
}

Tensor crop_rows(const Tensor& input, std::int64_t top) {
  require_rank4(input, "crop_rows input");
  if (top < 0 || top >= input.height()) {
    throw ShapeError("crop_rows top " + std::to_string(top) + " outside image of height " +
                     std::to_string(input.height()));
  }
  const std::int64_t H = input.height(), W = input.width(), Hn = H - top;
  const std::int64_t planes = input.batch() * input.channels();
  Tensor out({input.batch(), input.channels(), Hn, W});
  for (std::int64_t p = 0; p < planes; ++p) {
    std::memcpy(out.data() + p * Hn * W, input.data() + (p * H + top) * W,
                static_cast<std::size_t>(Hn * W) * sizeof(float));
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  Tensor out(a.shape());
  const std::int64_t n = a.numel();
  const float* x = a.data();
  const float* y = b.data();
  float* o = out.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) o[i] = x[i] + y[i];
  return out;
}

Tensor apply(const ConvLayer& layer, const Tensor& input) {
  return conv2d(input, layer.weight, layer.bias, layer.params);
}

Tensor apply(const AffineNorm& norm, const Tensor& input) { return affine_norm(input, norm.scale, norm.shift); }

Tensor conv_norm_relu(const ConvLayer& conv, const AffineNorm& norm, const Tensor& input) {
  return relu(apply(norm, apply(conv, input)));
}

}  // namespace stereodet
