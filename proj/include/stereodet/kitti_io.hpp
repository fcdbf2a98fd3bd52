// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "stereodet/image.hpp"
#include "stereodet/tensor.hpp"
#include "stereodet/types.hpp"

namespace stereodet {

/// Reads the P2 and P3 rows of a KITTI calib file; other keys are ignored.
CalibrationPair parse_calibration(std::string_view text);
std::string write_calibration(const CalibrationPair& calib);

/// One annotation per non-empty line. Lines need at least 15 fields; a 16th
/// is read as a score.
std::vector<ObjectAnnotation> parse_labels(std::string_view text);
std::string write_labels(const std::vector<ObjectAnnotation>& annotations);

/// KITTI submission rows: geometry with 2 decimals, score with 6, truncation
/// and occlusion written as -1.
std::string write_detections(const std::vector<Detection3D>& detections);

inline constexpr float kImageMean[3] = {0.485f, 0.456f, 0.406f};
inline constexpr float kImageStd[3] = {0.229f, 0.224f, 0.225f};

/// [1, 3, H, W] tensor, values scaled to [0, 1] then normalized per channel.
Tensor image_to_tensor(const Image& image);

std::pair<Tensor, Tensor> load_image_pair(const Image& left, const Image& right);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace stereodet
