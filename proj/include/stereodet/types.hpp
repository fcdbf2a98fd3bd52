// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <string>

namespace stereodet {

/// Row-major 3x4 projection matrix.
using Matrix34 = std::array<double, 12>;

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

/// Axis-aligned image box, pixels.
struct Box2D {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() > 0 && height() > 0 ? width() * height() : 0.0; }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }
};

/// Left/right rectified projections plus the quantities derived from them.
struct CalibrationPair {
  Matrix34 P2{};
  Matrix34 P3{};
  double fx = 0, fy = 0, cx = 0, cy = 0;
  double baseline = 0;  // meters

  /// Derives intrinsics and baseline; throws InputError if fx, fy or the
  /// baseline is not positive.
  static CalibrationPair from_matrices(const Matrix34& p2, const Matrix34& p3);
};

/// One row of a KITTI label file. `location` is the bottom center of the
/// box in camera coordinates (y points down).
struct ObjectAnnotation {
  std::string class_name;
  double truncation = 0;
  int occlusion = 0;
  double alpha = 0;
  Box2D box;
  double h = 0, w = 0, l = 0;
  Vec3 location;
  double rotation_y = 0;
  std::optional<double> score;  // present in detection files

  bool dont_care() const { return class_name == "DontCare"; }
};

struct Detection3D {
  std::string class_name;
  double score = 0;
  double alpha = 0;
  Box2D box;
  double h = 0, w = 0, l = 0;
  Vec3 location;
  double rotation_y = 0;
};

Detection3D to_detection(const ObjectAnnotation& ann, double default_score = 1.0);

}  // namespace stereodet
