// SPDX-License-Identifier: Apache-2.0
#include "stereodet/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "stereodet/error.hpp"
#include "stereodet/geometry.hpp"
#include "stereodet/kitti_io.hpp"

namespace stereodet {

CalibrationPair kitti_like_calibration() {
  const Matrix34 p2 = {721.5377, 0, 609.5593, 44.85728, 0, 721.5377, 172.854, 0.2163791, 0, 0, 1, 0.002745884};
  const Matrix34 p3 = {721.5377, 0, 609.5593, -339.5242, 0, 721.5377, 172.854, 2.199936, 0, 0, 1, 0.002729905};
  return CalibrationPair::from_matrices(p2, p3);
}

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
}

// 8 corners of a KITTI box (bottom-center location, yaw about +y).
std::vector<Vec3> box_corners(const ObjectAnnotation& a) {
  const double c = std::cos(a.rotation_y), s = std::sin(a.rotation_y);
  std::vector<Vec3> out;
  for (double dx : {-0.5 * a.l, 0.5 * a.l}) {
    for (double dz : {-0.5 * a.w, 0.5 * a.w}) {
      for (double dy : {0.0, -a.h}) {
        out.push_back({a.location.x + c * dx + s * dz, a.location.y + dy, a.location.z - s * dx + c * dz});
      }
    }
  }
  return out;
}

}  // namespace

SyntheticFrame make_synthetic_frame(std::uint64_t seed, const SyntheticOptions& opt) {
  if (opt.width <= opt.disparity || opt.height <= 0 || opt.disparity < 0) {
    throw InputError("synthetic frame size must exceed the disparity");
  }
  std::mt19937_64 rng(seed);
  SyntheticFrame f;
  f.calib = kitti_like_calibration();
  f.left = Image(opt.width, opt.height);
  // Piecewise-constant 4x4 blocks keep the texture matchable after resizing.
  const int bw = (opt.width + opt.disparity + 3) / 4 + 1, bh = (opt.height + 3) / 4;
  std::vector<std::uint8_t> blocks(static_cast<std::size_t>(bw) * bh * 3);
  for (auto& b : blocks) b = static_cast<std::uint8_t>(rng() & 0xff);
  auto texel = [&](int x, int y, int c) { return blocks[(static_cast<std::size_t>(y / 4) * bw + x / 4) * 3 + c]; };
  f.right = Image(opt.width, opt.height);
  for (int y = 0; y < opt.height; ++y) {
    for (int x = 0; x < opt.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        f.left.at(x, y, c) = texel(x, y, c);
        f.right.at(x, y, c) = texel(x + opt.disparity, y, c);
      }
    }
  }

  const int n = static_cast<int>(rng() % static_cast<std::uint64_t>(opt.max_objects + 1));
  for (int i = 0; i < n; ++i) {
    ObjectAnnotation a;
    a.class_name = "Car";
    a.h = uniform(rng, 1.4, 1.7);
    a.w = uniform(rng, 1.5, 1.8);
    a.l = uniform(rng, 3.5, 4.5);
    a.location = {uniform(rng, -8.0, 8.0), 1.65, uniform(rng, 8.0, 40.0)};
    a.rotation_y = uniform(rng, -kPi, kPi);
    a.alpha = ry_to_alpha(a.rotation_y, a.location.x, a.location.z);
    double x1 = 1e18, y1 = 1e18, x2 = -1e18, y2 = -1e18;
    bool visible = true;
    for (const Vec3& p : box_corners(a)) {
      if (p.z <= 0.1) {
        visible = false;
        break;
      }
      const Pixel px = project_to_image(p, f.calib);
      x1 = std::min(x1, px.u);
      y1 = std::min(y1, px.v);
      x2 = std::max(x2, px.u);
      y2 = std::max(y2, px.v);
    }
    if (!visible) continue;
    const double cx1 = std::clamp(x1, 0.0, opt.width - 1.0), cx2 = std::clamp(x2, 0.0, opt.width - 1.0);
    const double cy1 = std::clamp(y1, 0.0, opt.height - 1.0), cy2 = std::clamp(y2, 0.0, opt.height - 1.0);
    if (cx2 - cx1 < 4 || cy2 - cy1 < 4) continue;
    const double full = (x2 - x1) * (y2 - y1);
    a.truncation = std::clamp(1.0 - (cx2 - cx1) * (cy2 - cy1) / full, 0.0, 1.0);
    a.box = {cx1, cy1, cx2, cy2};
    f.annotations.push_back(a);
  }
  return f;
}

std::pair<GrayImage, GrayImage> make_shift_pair(std::uint64_t seed, int width, int height, int shift) {
  if (width <= 0 || height <= 0 || shift < 0) throw InputError("shift pair needs a positive size");
  std::mt19937_64 rng(seed);
  std::vector<std::uint8_t> tex(static_cast<std::size_t>(width + shift) * height);
  for (auto& t : tex) t = static_cast<std::uint8_t>(rng() & 0xff);
  GrayImage left(width, height), right(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      left.at(x, y) = tex[static_cast<std::size_t>(y) * (width + shift) + x];
      right.at(x, y) = tex[static_cast<std::size_t>(y) * (width + shift) + x + shift];
    }
  }
  return {std::move(left), std::move(right)};
}

std::string frame_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", index);
  return buf;
}

void write_kitti_frame(const std::filesystem::path& root, const std::string& id, const SyntheticFrame& frame) {
  for (const char* d : {"image_2", "image_3", "label_2", "calib"}) std::filesystem::create_directories(root / d);
  write_png(frame.left, root / "image_2" / (id + ".png"));
  write_png(frame.right, root / "image_3" / (id + ".png"));
  write_text_file(root / "label_2" / (id + ".txt"), write_labels(frame.annotations));
  write_text_file(root / "calib" / (id + ".txt"), write_calibration(frame.calib));
}

void write_synthetic_dataset(const std::filesystem::path& root, int count, std::uint64_t seed,
                             const SyntheticOptions& options) {
  if (count <= 0) throw InputError("dataset needs at least one frame");
  std::string split;
  for (int i = 0; i < count; ++i) {
    const std::string id = frame_id(i);
    write_kitti_frame(root, id, make_synthetic_frame(seed + static_cast<std::uint64_t>(i), options));
    split += id + "\n";
  }
  write_text_file(root / "split.txt", split);
}

}  // namespace stereodet
