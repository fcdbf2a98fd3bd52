// SPDX-License-Identifier: Apache-2.0
#include "stereodet/augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "stereodet/error.hpp"
#include "stereodet/geometry.hpp"

namespace stereodet {

namespace {

// Uniform in [lo, hi) from the top 53 bits; identical on every platform.
double uniform(std::mt19937_64& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::floor(std::clamp(v, 0.0, 255.0) + 0.5)); }

// h in degrees [0, 360), s and v in [0, 1].
void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double delta = mx - mn;
  v = mx;
  s = mx > 0 ? delta / mx : 0.0;
  if (delta <= 0) {
    h = 0;
    return;
  }
  if (mx == r) {
    h = 60.0 * std::fmod((g - b) / delta, 6.0);
  } else if (mx == g) {
    h = 60.0 * ((b - r) / delta + 2.0);
  } else {
    h = 60.0 * ((r - g) / delta + 4.0);
  }
  if (h < 0) h += 360.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double c = v * s;
  const double hp = h / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r1 = 0, g1 = 0, b1 = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r1 = c; g1 = x; break;
    case 1: r1 = x; g1 = c; break;
    case 2: g1 = c; b1 = x; break;
    case 3: g1 = x; b1 = c; break;
    case 4: r1 = x; b1 = c; break;
    default: r1 = c; b1 = x; break;
  }
  const double m = v - c;
  r = r1 + m;
  g = g1 + m;
  b = b1 + m;
}

}  // namespace

PhotometricTransform sample_photometric(const PhotometricParams& p) {
  if (p.brightness_delta < 0 || p.hue_delta < 0 || p.contrast_low > p.contrast_high ||
      p.saturation_low > p.saturation_high || p.contrast_low < 0 || p.saturation_low < 0) {
    throw InputError("photometric ranges are inverted or negative");
  }
  std::mt19937_64 rng(p.seed);
  PhotometricTransform t;
  t.brightness = uniform(rng, -p.brightness_delta, p.brightness_delta);
  t.contrast = uniform(rng, p.contrast_low, p.contrast_high);
  t.saturation = uniform(rng, p.saturation_low, p.saturation_high);
  t.hue = uniform(rng, -p.hue_delta, p.hue_delta);
  return t;
}

Image apply_photometric(const Image& image, const PhotometricTransform& t) {
  Image out = image;
  const bool hsv = t.saturation != 1.0 || t.hue != 0.0;
  const std::size_t n = static_cast<std::size_t>(image.width) * image.height;
  for (std::size_t i = 0; i < n; ++i) {
    double c[3];
    for (int k = 0; k < 3; ++k) {
      c[k] = std::clamp((image.rgb[3 * i + k] + t.brightness) * t.contrast, 0.0, 255.0);
    }
    if (hsv) {
      double h, s, v;
      rgb_to_hsv(c[0] / 255.0, c[1] / 255.0, c[2] / 255.0, h, s, v);
      s = std::clamp(s * t.saturation, 0.0, 1.0);
      h = std::fmod(h + t.hue, 360.0);
      if (h < 0) h += 360.0;
      hsv_to_rgb(h, s, v, c[0], c[1], c[2]);
      for (double& x : c) x *= 255.0;
    }
    for (int k = 0; k < 3; ++k) out.rgb[3 * i + k] = to_byte(c[k]);
  }
  return out;
}

std::pair<Image, Image> photometric_distort(const std::pair<Image, Image>& pair, const PhotometricParams& params) {
  const PhotometricTransform t = sample_photometric(params);
  return {apply_photometric(pair.first, t), apply_photometric(pair.second, t)};
}

Matrix34 mirror_projection(const Matrix34& P, int image_width) {
  // A * P * S with A = [[-1, 0, W-1], [0, 1, 0], [0, 0, 1]] and S = diag(-1, 1, 1, 1).
  const double w1 = image_width - 1.0;
  Matrix34 out{};
  for (int c = 0; c < 4; ++c) {
    out[c] = -P[c] + w1 * P[8 + c];
    out[4 + c] = P[4 + c];
    out[8 + c] = P[8 + c];
  }
  for (int r = 0; r < 3; ++r) out[4 * r] = -out[4 * r];
  return out;
}

StereoSample stereo_flip(const StereoSample& s) {
  if (s.left.width != s.right.width || s.left.height != s.right.height) {
    throw InputError("stereo flip needs equally sized images");
  }
  const int W = s.left.width;
  StereoSample out;
  out.left = mirror_horizontal(s.right);
  out.right = mirror_horizontal(s.left);
  out.calib = CalibrationPair::from_matrices(mirror_projection(s.calib.P3, W), mirror_projection(s.calib.P2, W));
  out.annotations = s.annotations;
  for (auto& a : out.annotations) {
    const Box2D b = a.box;
    a.box.x1 = W - b.x2;
    a.box.x2 = W - b.x1;
    if (a.dont_care()) continue;
    a.location.x = -a.location.x;
    a.alpha = wrap_angle(kPi - a.alpha);
    a.rotation_y = wrap_angle(kPi - a.rotation_y);
  }
  return out;
}

}  // namespace stereodet
