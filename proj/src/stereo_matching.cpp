// SPDX-License-Identifier: Apache-2.0
#include "stereodet/stereo_matching.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

#include <json.hpp>

#include "stereodet/error.hpp"
#include "stereodet/parallel.hpp"

namespace stereodet {

namespace {

void check_pair(const Tensor& left, const Tensor& right, int max_disp) {
  require_rank4(left, "left features");
  require_rank4(right, "right features");
  if (left.shape() != right.shape()) {
    throw ShapeError("left features " + to_string(left.shape()) + " and right features " +
                     to_string(right.shape()) + " differ");
  }
  if (max_disp < 1) throw ShapeError("max_disp must be >= 1, got " + std::to_string(max_disp));
}

/// sqrt of the per-pixel channel sum of squares, [B, H, W].
std::vector<float> pixel_norms(const Tensor& t) {
  const std::int64_t B = t.batch(), C = t.channels(), HW = t.height() * t.width();
  std::vector<float> sq(static_cast<std::size_t>(B * HW), 0.0f);
  const float* d = t.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < B; ++b) {
    float* acc = sq.data() + b * HW;
    for (std::int64_t c = 0; c < C; ++c) {
      const float* plane = d + (b * C + c) * HW;
      for (std::int64_t i = 0; i < HW; ++i) acc[i] += plane[i] * plane[i];
    }
    for (std::int64_t i = 0; i < HW; ++i) acc[i] = std::sqrt(acc[i]);
  }
  return sq;
}

}  // namespace

CostVolume correlation_volume(const Tensor& left, const Tensor& right, int max_disp) {
  check_pair(left, right, max_disp);
  const std::int64_t B = left.batch(), C = left.channels(), H = left.height(), W = left.width();
  const std::int64_t D = max_disp, HW = H * W;
  CostVolume vol{CostVolumeKind::kCorrelation, max_disp, Tensor({B, D, H, W})};
  const auto nl = pixel_norms(left);
  const auto nr = pixel_norms(right);
  const float* L = left.data();
  const float* R = right.data();
  float* out = vol.data.data();

  // Task order (b, y, d) keeps the rows of one y hot across hypotheses.
#pragma omp parallel for schedule(static)
  for (std::int64_t task = 0; task < B * H * D; ++task) {
    const std::int64_t d = task % D;
    const std::int64_t y = (task / D) % H;
    const std::int64_t b = task / (D * H);
    float* orow = out + ((b * D + d) * H + y) * W;
    if (d >= W) continue;  // all hypotheses out of range; already zero
    for (std::int64_t x = d; x < W; ++x) orow[x] = 0.0f;
    for (std::int64_t c = 0; c < C; ++c) {
      const float* lrow = L + (b * C + c) * HW + y * W;
      const float* rrow = R + (b * C + c) * HW + y * W - d;
      for (std::int64_t x = d; x < W; ++x) orow[x] += lrow[x] * rrow[x];
    }
    const float* nlrow = nl.data() + b * HW + y * W;
    const float* nrrow = nr.data() + b * HW + y * W - d;
    for (std::int64_t x = d; x < W; ++x) {
      const float denom = nlrow[x] * nrrow[x];
      orow[x] = denom > 0.0f ? orow[x] / denom : 0.0f;
    }
  }
  return vol;
}

CostVolume concatenation_volume(const Tensor& left, const Tensor& right, int max_disp) {
  check_pair(left, right, max_disp);
  const std::int64_t B = left.batch(), C = left.channels(), H = left.height(), W = left.width();
  const std::int64_t D = max_disp, HW = H * W;
  CostVolume vol{CostVolumeKind::kConcatenation, max_disp, Tensor({B, 2 * C, D, H, W})};
  const float* L = left.data();
  const float* R = right.data();
  float* out = vol.data.data();

#pragma omp parallel for schedule(static)
  for (std::int64_t task = 0; task < B * 2 * C * D; ++task) {
    const std::int64_t d = task % D;
    const std::int64_t c = (task / D) % (2 * C);
    const std::int64_t b = task / (D * 2 * C);
    float* dst = out + task * HW;
    if (c < C) {
      std::memcpy(dst, L + (b * C + c) * HW, static_cast<std::size_t>(HW) * sizeof(float));
      continue;
    }
    const float* src = R + (b * C + (c - C)) * HW;
    for (std::int64_t y = 0; y < H; ++y) {
      float* drow = dst + y * W;
      const float* srow = src + y * W;
      const std::int64_t shift = std::min(d, W);
      std::memset(drow, 0, static_cast<std::size_t>(shift) * sizeof(float));
      if (shift < W) std::memcpy(drow + shift, srow, static_cast<std::size_t>(W - shift) * sizeof(float));
    }
  }
  return vol;
}

Tensor flatten_volume(const CostVolume& volume) {
  const auto& s = volume.data.shape();
  if (volume.kind != CostVolumeKind::kConcatenation || s.size() != 5) {
    throw ShapeError("flatten_volume expects a 5-D concatenation volume, got " + to_string(s));
  }
  return volume.data.reshaped({s[0], s[1] * s[2], s[3], s[4]});
}

// --- ghost ------------------------------------------------------------------

Tensor ghost_dense_forward(const Tensor& input, const GhostParams& p, ForwardTrace* trace, const std::string& name) {
  require_rank4(input, "ghost input");
  const std::int64_t C = input.channels();
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) throw ShapeError(name + ": " + what + " does not match " + std::to_string(C) + " input channels");
  };
  expect(p.primary.weight.rank() == 4 && p.primary.weight.dim(0) == C &&
             p.primary.weight.dim(1) * p.primary.params.groups == C,
         "primary convolution " + to_string(p.primary.weight.shape()));
  expect(p.cheap.weight.rank() == 4 && p.cheap.weight.dim(0) == C && p.cheap.params.groups == C &&
             p.cheap.weight.dim(1) == 1,
         "depthwise convolution " + to_string(p.cheap.weight.shape()));
  expect(static_cast<std::int64_t>(p.primary_norm.scale.size()) == C &&
             static_cast<std::int64_t>(p.cheap_norm.scale.size()) == C,
         "norm width");

  Tensor primary = conv_norm_relu(p.primary, p.primary_norm, input);
  trace_record(trace, name + ".primary", primary);
  Tensor cheap = conv_norm_relu(p.cheap, p.cheap_norm, primary);
  trace_record(trace, name + ".cheap", cheap);
  Tensor out = concat_channels({input, primary, cheap});
  trace_record(trace, name, out);
  return out;
}

// --- fusion -----------------------------------------------------------------

std::int64_t FusionConfig::fused_channels(bool learned_down) const {
  const std::int64_t concat16 = 2LL * reduce16_channels * max_disp16;
  if (learned_down) return down8_channels + concat16;
  const std::int64_t cat8 = 3LL * max_disp4 + max_disp8;
  return 3 * cat8 + concat16;
}

namespace {

void check_level(const PyramidLevel& level, const char* name) {
  require_rank4(level.left, name);
  if (level.left.shape() != level.right.shape()) {
    throw ShapeError(std::string(name) + ": left " + to_string(level.left.shape()) + " and right " +
                     to_string(level.right.shape()) + " differ");
  }
}

void check_halves(const Tensor& fine, const Tensor& coarse, const char* name) {
  if (coarse.batch() != fine.batch() || fine.height() != 2 * coarse.height() || fine.width() != 2 * coarse.width()) {
    throw ShapeError(std::string("inconsistent pyramid at ") + name + ": " + to_string(fine.shape()) + " -> " +
                     to_string(coarse.shape()));
  }
}

Tensor downsample(const std::optional<ConvLayer>& conv, const Tensor& x) {
  if (conv) return relu(apply(*conv, x));
  return avg_pool2x2(x);
}

}  // namespace

Tensor hierarchical_fusion_forward(const PyramidLevel& feat4, const PyramidLevel& feat8, const PyramidLevel& feat16,
                                   const FusionParams& params, const FusionConfig& config, ForwardTrace* trace) {
  check_level(feat4, "scale-4 features");
  check_level(feat8, "scale-8 features");
  check_level(feat16, "scale-16 features");
  check_halves(feat4.left, feat8.left, "1/4 -> 1/8");
  check_halves(feat8.left, feat16.left, "1/8 -> 1/16");

  Tensor corr4 = correlation_volume(feat4.left, feat4.right, config.max_disp4).data;
  trace_record(trace, "fusion.corr4", corr4);
  Tensor ghost4 = ghost_dense_forward(corr4, params.ghost4, trace, "fusion.ghost4");
  Tensor down4 = downsample(params.down4, ghost4);
  trace_record(trace, "fusion.down4", down4);

  Tensor corr8 = correlation_volume(feat8.left, feat8.right, config.max_disp8).data;
  trace_record(trace, "fusion.corr8", corr8);
  if (down4.height() != corr8.height() || down4.width() != corr8.width()) {
    throw ShapeError("downsampled 1/4 stereo feature " + to_string(down4.shape()) + " does not align with " +
                     to_string(corr8.shape()));
  }
  Tensor cat8 = concat_channels({down4, corr8});
  trace_record(trace, "fusion.cat8", cat8);
  Tensor ghost8 = ghost_dense_forward(cat8, params.ghost8, trace, "fusion.ghost8");
  Tensor down8 = downsample(params.down8, ghost8);
  trace_record(trace, "fusion.down8", down8);

  Tensor reduced_left = apply(params.reduce16, feat16.left);
  Tensor reduced_right = apply(params.reduce16, feat16.right);
  trace_record(trace, "fusion.reduce16", reduced_left);
  Tensor concat16 = flatten_volume(concatenation_volume(reduced_left, reduced_right, config.max_disp16));
  trace_record(trace, "fusion.concat16", concat16);
  if (down8.height() != concat16.height() || down8.width() != concat16.width()) {
    throw ShapeError("downsampled 1/8 stereo feature " + to_string(down8.shape()) + " does not align with " +
                     to_string(concat16.shape()));
  }
  Tensor out = concat_channels({down8, concat16});
  trace_record(trace, "fusion.out", out);
  return out;
}

// --- benchmark ----------------------------------------------------------------

std::string CostVolumeBenchReport::to_text() const {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(3);
  os << "shape " << to_string(shape) << " max_disp " << max_disp << " reps " << repetitions << " threads "
     << threads << "\n";
  os << "correlation    median " << correlation_median_ms << " ms  min " << correlation_min_ms << " ms\n";
  os << "concatenation  median " << concatenation_median_ms << " ms  min " << concatenation_min_ms << " ms\n";
  os << "ratio concatenation/correlation " << ratio << "\n";
  return os.str();
}

std::string CostVolumeBenchReport::to_json() const {
  nlohmann::json j;
  j["shape"] = shape;
  j["max_disp"] = max_disp;
  j["repetitions"] = repetitions;
  j["threads"] = threads;
  j["results"] = nlohmann::json::array({
      {{"kind", "correlation"}, {"median_ms", correlation_median_ms}, {"min_ms", correlation_min_ms}},
      {{"kind", "concatenation"}, {"median_ms", concatenation_median_ms}, {"min_ms", concatenation_min_ms}},
  });
  j["ratio"] = ratio;
  return j.dump(2);
}

namespace {

template <typename F>
std::vector<double> time_runs(int reps, F&& f) {
  std::vector<double> ms;
  ms.reserve(static_cast<std::size_t>(reps));
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return ms;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

CostVolumeBenchReport bench_cost_volumes(const Shape& shape, int max_disp, int repetitions, int threads,
                                         unsigned seed) {
  if (repetitions < 3) throw InputError("bench needs at least 3 repetitions, got " + std::to_string(repetitions));
  if (shape.size() != 4) throw ShapeError("bench shape must be B x C x H x W, got " + to_string(shape));
  if (threads < 1) throw InputError("bench threads must be >= 1");

  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  Tensor left(shape), right(shape);
  for (float& v : left.values()) v = dist(rng);
  for (float& v : right.values()) v = dist(rng);

  ScopedThreads scope(threads);
  CostVolumeBenchReport r;
  r.shape = shape;
  r.max_disp = max_disp;
  r.repetitions = repetitions;
  r.threads = threads;
  auto corr = time_runs(repetitions, [&] { (void)correlation_volume(left, right, max_disp); });
  auto cat = time_runs(repetitions, [&] { (void)concatenation_volume(left, right, max_disp); });
  r.correlation_median_ms = median(corr);
  r.correlation_min_ms = *std::min_element(corr.begin(), corr.end());
  r.concatenation_median_ms = median(cat);
  r.concatenation_min_ms = *std::min_element(cat.begin(), cat.end());
  r.ratio = r.correlation_median_ms > 0 ? r.concatenation_median_ms / r.correlation_median_ms : 0.0;
  return r;
}

}  // namespace stereodet
