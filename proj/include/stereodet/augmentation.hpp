// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "stereodet/image.hpp"
#include "stereodet/types.hpp"

namespace stereodet {

/// Sampling ranges for the photometric distortion, in 8-bit units for
/// brightness and degrees for hue.
struct PhotometricParams {
  double brightness_delta = 32.0;      // uniform in [-b, b]
  double contrast_low = 0.5, contrast_high = 1.5;
  double saturation_low = 0.5, saturation_high = 1.5;
  double hue_delta = 18.0;             // degrees, uniform in [-h, h]
  std::uint64_t seed = 0;
};

/// One concrete draw, applied identically to both images.
struct PhotometricTransform {
  double brightness = 0;
  double contrast = 1;
  double saturation = 1;
  double hue = 0;
};

PhotometricTransform sample_photometric(const PhotometricParams& params);

/// brightness, contrast, then saturation and hue in HSV; clamped to [0, 255]
/// and rounded half up.
Image apply_photometric(const Image& image, const PhotometricTransform& transform);

std::pair<Image, Image> photometric_distort(const std::pair<Image, Image>& pair, const PhotometricParams& params);

struct StereoSample {
  Image left;
  Image right;
  std::vector<ObjectAnnotation> annotations;
  CalibrationPair calib;
};

/// Mirrors both images and swaps them, mirrors objects (x -> -x, alpha -> pi - alpha,
/// ry -> pi - ry, boxes about the image width) and rewrites both projections
/// for the mirrored, swapped cameras. An involution.
StereoSample stereo_flip(const StereoSample& sample);

/// Projection of a mirrored scene (X -> -X) into a mirrored image of width W.
Matrix34 mirror_projection(const Matrix34& P, int image_width);

}  // namespace stereodet
