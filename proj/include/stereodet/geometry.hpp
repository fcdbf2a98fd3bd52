// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <numbers>
#include <span>
#include <vector>

#include "stereodet/types.hpp"

namespace stereodet {

inline constexpr double kPi = std::numbers::pi;

/// Maps any angle to (-pi, pi].
double wrap_angle(double angle);

// --- orientation ------------------------------------------------------------

/// Observation angle folded onto the doubled-angle circle. alpha and
/// alpha + pi share (sin2a, cos2a); `facing` tells them apart.
struct OrientationEncoding {
  double sin2a = 0;
  double cos2a = 1;
  bool facing = false;  // |alpha| > pi/2
};

OrientationEncoding encode_orientation(double alpha);
/// Throws InputError on a zero (sin2a, cos2a) vector.
double decode_orientation(const OrientationEncoding& enc);

/// ry = wrap(alpha + atan2(x, z)); requires z > 0.
double alpha_to_ry(double alpha, double x, double z);
double ry_to_alpha(double ry, double x, double z);

// --- projection ---------------------------------------------------------------

struct Pixel {
  double u = 0, v = 0;
};

/// Homogeneous projection through `P`; requires positive depth.
Pixel project_to_image(const Vec3& point, const Matrix34& P);
Pixel project_to_image(const Vec3& point, const CalibrationPair& calib);

/// Inverse of project_to_image for a known camera-frame depth z.
Vec3 back_project(const Pixel& pixel, double z, const Matrix34& P);
Vec3 back_project(const Pixel& pixel, double z, const CalibrationPair& calib);

// --- overlap ----------------------------------------------------------------

double iou_2d(const Box2D& a, const Box2D& b);

/// Rotated rectangle on the ground plane (x, z). `l` runs along the heading
/// direction (cos yaw, -sin yaw), `w` across it.
struct BevBox {
  double cx = 0, cz = 0, w = 0, l = 0, yaw = 0;
};

struct Point2 {
  double x = 0, y = 0;
};

/// Counter-clockwise corners in (x, z).
std::vector<Point2> bev_corners(const BevBox& box);
/// Area of the intersection of two convex polygons given counter-clockwise.
double convex_intersection_area(std::span<const Point2> a, std::span<const Point2> b);
double polygon_area(std::span<const Point2> polygon);

double iou_bev(const BevBox& a, const BevBox& b);

/// KITTI 3D box: bottom-center location, vertical extent [y - h, y].
struct Box3D {
  Vec3 location;
  double h = 0, w = 0, l = 0;
  double ry = 0;

  BevBox bev() const { return {location.x, location.z, w, l, ry}; }
};

Box3D box3d_of(const Detection3D& det);
Box3D box3d_of(const ObjectAnnotation& ann);

double iou_3d(const Box3D& a, const Box3D& b);

// --- suppression --------------------------------------------------------------

/// Greedy 2D non-maximum suppression. Returns kept indices in descending
/// score order; equal scores keep input order.
std::vector<std::size_t> nms_indices(std::span<const Detection3D> dets, double iou_threshold);
std::vector<Detection3D> nms(std::span<const Detection3D> dets, double iou_threshold);

}  // namespace stereodet
