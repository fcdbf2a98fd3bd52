// SPDX-License-Identifier: Apache-2.0
#include "stereodet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stereodet/error.hpp"

namespace stereodet {

double wrap_angle(double angle) {
  if (!std::isfinite(angle)) throw InputError("angle is not finite");
  double a = std::fmod(angle + kPi, 2.0 * kPi);
  if (a < 0) a += 2.0 * kPi;
  a -= kPi;
  return a <= -kPi ? kPi : a;
}

OrientationEncoding encode_orientation(double alpha) {
  const double a = wrap_angle(alpha);
  return {std::sin(2.0 * a), std::cos(2.0 * a), std::abs(a) > kPi / 2};
}

double decode_orientation(const OrientationEncoding& enc) {
  if (enc.sin2a == 0.0 && enc.cos2a == 0.0) throw InputError("orientation vector is zero");
  const double a0 = 0.5 * std::atan2(enc.sin2a, enc.cos2a);  // (-pi/2, pi/2]
  if (!enc.facing) return a0;
  return a0 > 0 ? a0 - kPi : a0 + kPi;
}

double alpha_to_ry(double alpha, double x, double z) {
  if (!(z > 0)) throw InputError("object depth must be positive");
  return wrap_angle(alpha + std::atan2(x, z));
}

double ry_to_alpha(double ry, double x, double z) {
  if (!(z > 0)) throw InputError("object depth must be positive");
  return wrap_angle(ry - std::atan2(x, z));
}

Pixel project_to_image(const Vec3& p, const Matrix34& P) {
  const double w = P[8] * p.x + P[9] * p.y + P[10] * p.z + P[11];
  if (!(w > 0)) throw InputError("point projects behind the camera");
  return {(P[0] * p.x + P[1] * p.y + P[2] * p.z + P[3]) / w, (P[4] * p.x + P[5] * p.y + P[6] * p.z + P[7]) / w};
}

Pixel project_to_image(const Vec3& point, const CalibrationPair& calib) { return project_to_image(point, calib.P2); }

Vec3 back_project(const Pixel& px, double z, const Matrix34& P) {
  if (!(z > 0)) throw InputError("back-projection depth must be positive");
  // Linear in (x, y) once z is fixed.
  const double a11 = P[0] - px.u * P[8], a12 = P[1] - px.u * P[9];
  const double a21 = P[4] - px.v * P[8], a22 = P[5] - px.v * P[9];
  const double b1 = px.u * (P[10] * z + P[11]) - P[2] * z - P[3];
  const double b2 = px.v * (P[10] * z + P[11]) - P[6] * z - P[7];
  const double det = a11 * a22 - a12 * a21;
  if (std::abs(det) < 1e-12) throw InputError("projection matrix is singular for back-projection");
  return {(b1 * a22 - a12 * b2) / det, (a11 * b2 - b1 * a21) / det, z};
}

Vec3 back_project(const Pixel& pixel, double z, const CalibrationPair& calib) {
  return back_project(pixel, z, calib.P2);
}

double iou_2d(const Box2D& a, const Box2D& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

std::vector<Point2> bev_corners(const BevBox& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double hl = 0.5 * b.l, hw = 0.5 * b.w;
  const double local[4][2] = {{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}};
  std::vector<Point2> out;
  out.reserve(4);
  for (const auto& p : local) out.push_back({b.cx + c * p[0] + s * p[1], b.cz - s * p[0] + c * p[1]});
  return out;
}

double polygon_area(std::span<const Point2> poly) {
  const std::size_t n = poly.size();
  if (n < 3) return 0.0;
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Point2& p = poly[i];
    const Point2& q = poly[(i + 1) % n];
    acc += p.x * q.y - q.x * p.y;
  }
  return 0.5 * std::abs(acc);
}

double convex_intersection_area(std::span<const Point2> a, std::span<const Point2> b) {
  std::vector<Point2> out(a.begin(), a.end());
  const std::size_t m = b.size();
  for (std::size_t e = 0; e < m && !out.empty(); ++e) {
    const Point2 p = b[e], q = b[(e + 1) % m];
    auto side = [&](const Point2& r) { return (q.x - p.x) * (r.y - p.y) - (q.y - p.y) * (r.x - p.x); };
    std::vector<Point2> in;
    in.swap(out);
    for (std::size_t i = 0; i < in.size(); ++i) {
      const Point2 cur = in[i], nxt = in[(i + 1) % in.size()];
      const double sc = side(cur), sn = side(nxt);
      if (sc >= 0) out.push_back(cur);
      if ((sc >= 0) != (sn >= 0)) {
        const double t = sc / (sc - sn);
        out.push_back({cur.x + t * (nxt.x - cur.x), cur.y + t * (nxt.y - cur.y)});
      }
    }
  }
  return polygon_area(out);
}

double iou_bev(const BevBox& a, const BevBox& b) {
  const auto ca = bev_corners(a), cb = bev_corners(b);
  const double inter = convex_intersection_area(ca, cb);
  const double uni = a.w * a.l + b.w * b.l - inter;
  return uni > 0 ? inter / uni : 0.0;
}

Box3D box3d_of(const Detection3D& d) { return {d.location, d.h, d.w, d.l, d.rotation_y}; }
Box3D box3d_of(const ObjectAnnotation& a) { return {a.location, a.h, a.w, a.l, a.rotation_y}; }

double iou_3d(const Box3D& a, const Box3D& b) {
  const double y_overlap = std::min(a.location.y, b.location.y) - std::max(a.location.y - a.h, b.location.y - b.h);
  if (y_overlap <= 0) return 0.0;
  const auto ca = bev_corners(a.bev()), cb = bev_corners(b.bev());
  const double inter = convex_intersection_area(ca, cb) * y_overlap;
  const double uni = a.h * a.w * a.l + b.h * b.w * b.l - inter;
  return uni > 0 ? inter / uni : 0.0;
}

std::vector<std::size_t> nms_indices(std::span<const Detection3D> dets, double iou_threshold) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return dets[i].score > dets[j].score; });
  std::vector<std::size_t> kept;
  std::vector<char> removed(dets.size(), 0);
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (removed[i]) continue;
    kept.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (!removed[j] && iou_2d(dets[i].box, dets[j].box) > iou_threshold) removed[j] = 1;
    }
  }
  return kept;
}

std::vector<Detection3D> nms(std::span<const Detection3D> dets, double iou_threshold) {
  std::vector<Detection3D> out;
  for (std::size_t i : nms_indices(dets, iou_threshold)) out.push_back(dets[i]);
  return out;
}

}  // namespace stereodet
