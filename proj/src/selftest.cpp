// SPDX-License-Identifier: Apache-2.0
#include "stereodet/selftest.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <random>

#include "stereodet/anchors.hpp"
#include "stereodet/augmentation.hpp"
#include "stereodet/disparity_gt.hpp"
#include "stereodet/evaluation.hpp"
#include "stereodet/geometry.hpp"
#include "stereodet/losses.hpp"
#include "stereodet/ops.hpp"
#include "stereodet/reference.hpp"
#include "stereodet/stereo_matching.hpp"
#include "stereodet/synthetic.hpp"

namespace stereodet {

namespace {

Tensor random_tensor(std::mt19937& rng, Shape shape) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Tensor t(std::move(shape));
  for (float& v : t.values()) v = u(rng);
  return t;
}

std::string fmt(const char* f, double v) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

SelftestCheck conv_matches_reference() {
  std::mt19937 rng(1);
  const Tensor x = random_tensor(rng, {1, 6, 13, 17});
  const Tensor w = random_tensor(rng, {4, 3, 3, 3});
  const std::vector<float> b = {0.1f, -0.2f, 0.3f, 0.0f};
  const Conv2dParams p{2, 1, 2};
  const bool ok = conv2d(x, w, b, p) == reference::conv2d(x, w, b, p);
  return {"conv2d == serial reference", ok, ok ? "bit-identical" : "outputs differ"};
}

SelftestCheck cost_volumes_match_reference() {
  std::mt19937 rng(2);
  const Tensor l = random_tensor(rng, {2, 5, 7, 11});
  const Tensor r = random_tensor(rng, {2, 5, 7, 11});
  const bool ok = correlation_volume(l, r, 6).data == reference::correlation_volume(l, r, 6).data &&
                  concatenation_volume(l, r, 6).data == reference::concatenation_volume(l, r, 6).data;
  return {"cost volumes == serial reference", ok, ok ? "bit-identical" : "outputs differ"};
}

SelftestCheck ghost_triples_channels() {
  std::mt19937 rng(3);
  const int c = 5;
  GhostParams g;
  g.primary = {random_tensor(rng, {c, c, 1, 1}), std::vector<float>(c, 0.0f), {}};
  g.primary_norm = {std::vector<float>(c, 1.0f), std::vector<float>(c, 0.0f)};
  g.cheap = {random_tensor(rng, {c, 1, 3, 3}), std::vector<float>(c, 0.0f), {1, 1, c}};
  g.cheap_norm = g.primary_norm;
  const Tensor x = random_tensor(rng, {1, c, 6, 9});
  const Tensor y = ghost_dense_forward(x, g);
  const bool ok = y.channels() == 3 * c && slice_channels(y, 0, c) == x;
  return {"ghost module triples channels", ok, "output " + to_string(y.shape())};
}

SelftestCheck disparity_target_normalized() {
  const DisparityDistributionTarget t = disparity_target(Tensor({1, 1}, 1.0f), 4, 0.5);
  double sum = 0;
  for (int d = 0; d < 4; ++d) sum += t.prob(d, 0, 0);
  const double z = 2 * std::exp(-2.0) + 1 + std::exp(-4.0);
  const double err = std::abs(t.prob(1, 0, 0) - 1 / z);
  const bool ok = std::abs(sum - 1) < 1e-9 && err < 1e-12;
  return {"disparity target sums to one", ok, fmt("P(1) error %.3g", err)};
}

SelftestCheck focal_gradient() {
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> u(-2, 2);
  const int D = 6, H = 2, W = 3;
  Tensor gt({H, W});
  for (float& v : gt.values()) v = static_cast<float>(std::abs(u(rng)) * 2);
  const auto target = disparity_target(gt, D);
  std::vector<double> z(D * H * W);
  for (double& v : z) v = u(rng);
  const StereoFocalOptions opt{0.5, FocusSign::kConventional};
  const LossResult r = stereo_focal_loss(z, target, opt);
  double worst = 0, scale = 1e-12;
  for (std::size_t i = 0; i < z.size(); ++i) {
    auto zp = z, zm = z;
    zp[i] += 1e-4;
    zm[i] -= 1e-4;
    const double fd = (stereo_focal_loss(zp, target, opt).loss - stereo_focal_loss(zm, target, opt).loss) / 2e-4;
    worst = std::max(worst, std::abs(fd - r.grad[i]));
    scale = std::max(scale, std::abs(r.grad[i]));
  }
  const bool ok = worst / scale < 1e-5;
  return {"stereo focal gradient vs finite differences", ok, fmt("rel error %.3g", worst / scale)};
}

SelftestCheck orientation_roundtrip() {
  double worst = 0;
  for (int i = -50; i <= 50; ++i) {
    const double a = wrap_angle(i * 0.0623 + 0.01);
    worst = std::max(worst, std::abs(wrap_angle(decode_orientation(encode_orientation(a)) - a)));
  }
  return {"orientation encode/decode", worst < 1e-9, fmt("max error %.3g", worst)};
}

SelftestCheck block_matching_shift() {
  const auto [l, r] = make_shift_pair(5, 160, 40, 7);
  BlockMatchParams p;
  p.search_range = 24;
  const SparseDisparityMap m = block_match(l, r, p);
  std::size_t good = 0;
  for (float v : m.values) good += v == 7.0f;
  const double frac = m.valid_count() ? double(good) / double(m.valid_count()) : 0.0;
  return {"block matching recovers a 7 px shift", frac >= 0.95, fmt("%.1f%% correct", 100 * frac)};
}

SelftestCheck flip_involution() {
  SyntheticOptions o;
  o.width = 96;
  o.height = 40;
  const SyntheticFrame f = make_synthetic_frame(6, o);
  const StereoSample s{f.left, f.right, f.annotations, f.calib};
  const StereoSample back = stereo_flip(stereo_flip(s));
  bool ok = back.left == s.left && back.right == s.right;
  for (int i = 0; i < 12; ++i) ok = ok && std::abs(back.calib.P2[i] - s.calib.P2[i]) < 1e-9;
  return {"stereo flip is an involution", ok, ok ? "images bit-identical" : "mismatch"};
}

SelftestCheck perfect_ap() {
  std::vector<std::vector<ObjectAnnotation>> gts;
  std::vector<std::vector<Detection3D>> dets;
  for (int i = 0; i < 6; ++i) {
    gts.push_back(make_synthetic_frame(100 + i).annotations);
    for (auto& a : gts.back()) {
      a.truncation = 0;
      a.occlusion = 0;
      if (a.box.height() < 41) a.box.y2 = a.box.y1 + 41;
    }
    dets.emplace_back();
    for (const auto& a : gts.back()) dets.back().push_back(to_detection(a));
  }
  ApOptions opt;
  opt.bucket = bucket_named("easy");
  const double ap = average_precision(gts, dets, opt);
  return {"ground truth as detections gives AP 1", ap == 1.0, fmt("AP %.6f", ap)};
}

}  // namespace

std::vector<SelftestCheck> run_selftest() {
  const std::vector<std::function<SelftestCheck()>> checks = {
      conv_matches_reference, cost_volumes_match_reference, ghost_triples_channels, disparity_target_normalized,
      focal_gradient,         orientation_roundtrip,        block_matching_shift,   flip_involution,
      perfect_ap};
  std::vector<SelftestCheck> out;
  for (const auto& c : checks) {
    try {
      out.push_back(c());
    } catch (const std::exception& e) {
      out.push_back({"(check threw)", false, e.what()});
    }
  }
  return out;
}

}  // namespace stereodet
