// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <random>
#include <unistd.h>

#include "doctest.h"
#include "stereodet/error.hpp"
#include "stereodet/image.hpp"
#include "stereodet/kitti_io.hpp"

using namespace stereodet;
namespace fs = std::filesystem;

namespace {

const char* kCalib =
    "P0: 721.5377 0 609.5593 0 0 721.5377 172.854 0 0 0 1 0\n"
    "P1: 721.5377 0 609.5593 -387.5744 0 721.5377 172.854 0 0 0 1 0\n"
    "P2: 721.5377 0 609.5593 0 0 721.5377 172.854 0 0 0 1 0\n"
    "P3: 721.5377 0 609.5593 -386.1448 0 721.5377 172.854 0 0 0 1 0\n"
    "R0_rect: 1 0 0 0 1 0 0 0 1\n";

fs::path temp_dir() {
  const fs::path p = fs::temp_directory_path() / ("stereodet_io_" + std::to_string(::getpid()));
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("parse_calibration: KITTI file gives baseline 386.1448 / 721.5377") {
  const CalibrationPair c = parse_calibration(kCalib);
  CHECK(c.fx == 721.5377);
  CHECK(c.cx == 609.5593);
  CHECK(c.cy == 172.854);
  CHECK(c.baseline == doctest::Approx(386.1448 / 721.5377).epsilon(1e-12));
  CHECK(c.baseline == doctest::Approx(0.5352).epsilon(1e-3));
}

TEST_CASE("parse_calibration: identical cameras are rejected") {
  CHECK_THROWS_AS(parse_calibration("P2: 700 0 600 0 0 700 170 0 0 0 1 0\nP3: 700 0 600 0 0 700 170 0 0 0 1 0\n"),
                  InputError);
}

TEST_CASE("parse_calibration: identity-like P2") {
  const CalibrationPair c =
      parse_calibration("P2: 500 0 320 0 0 500 320 0 0 0 1 0\nP3: 500 0 320 -250 0 500 320 0 0 0 1 0\n");
  CHECK(c.fx == 500);
  CHECK(c.fy == 500);
  CHECK(c.cx == 320);
  CHECK(c.cy == 320);
  CHECK(c.baseline == doctest::Approx(0.5));
}

TEST_CASE("parse_calibration: errors name the line") {
  try {
    parse_calibration("P2: 1 2 3\nP3: 1 0 0 0 0 1 0 0 0 0 1 0\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 1);
    CHECK(std::string(e.what()).rfind("line 1:", 0) == 0);
  }
  CHECK_THROWS_AS(parse_calibration("P2: 1 0 0 0 0 1 0 0 0 0 1 0\n"), ParseError);
  try {
    parse_calibration("P2: 1 0 0 0 0 1 0 0 0 0 1 0\nP3: 1 0 0 x 0 1 0 0 0 0 1 0\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("parse_calibration property: synthesized files roundtrip") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> f(300, 1200), c(100, 800), t(-600, -50);
  for (int i = 0; i < 100; ++i) {
    Matrix34 p2 = {f(rng), 0, c(rng), 0, 0, f(rng), c(rng), 0, 0, 0, 1, 0};
    Matrix34 p3 = p2;
    p3[3] = t(rng);
    const CalibrationPair a = CalibrationPair::from_matrices(p2, p3);
    const CalibrationPair b = parse_calibration("calib_time: x\n" + write_calibration(a) + "Tr_velo_to_cam: 0\n");
    for (int k = 0; k < 12; ++k) CHECK(b.P3[k] == doctest::Approx(a.P3[k]).epsilon(1e-11));
    CHECK(b.baseline == doctest::Approx(a.baseline).epsilon(1e-9));
  }
}

TEST_CASE("parse_labels") {
  CHECK(parse_labels("").empty());
  const auto one = parse_labels("Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 20.0 -1.59\n");
  REQUIRE(one.size() == 1);
  CHECK(one[0].class_name == "Car");
  CHECK(one[0].location.z == 20.0);
  CHECK(one[0].box.x2 == 614.12);
  CHECK_FALSE(one[0].score.has_value());
  try {
    parse_labels("Car 0 0 0 1 2 3 4 1 1 1 0 0 20\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 1);
  }
  const auto dc = parse_labels("\nDontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10\n");
  REQUIRE(dc.size() == 1);
  CHECK(dc[0].dont_care());
}

TEST_CASE("write_detections") {
  CHECK(write_detections({}).empty());
  Detection3D d;
  d.class_name = "Car";
  d.score = 1.0;
  d.box = {1, 2, 3, 4};
  d.h = d.w = d.l = 1;
  d.location = {0, 1, 20};
  const std::string line = write_detections({d});
  CHECK(line.substr(line.size() - 10) == " 1.000000\n");
  d.location.z = std::nan("");
  CHECK_THROWS_AS(write_detections({d}), InputError);
}

TEST_CASE("write_detections -> parse_labels roundtrip within 2-decimal quantization") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-50, 50), s(0, 1);
  std::vector<Detection3D> dets;
  for (int i = 0; i < 200; ++i) {
    Detection3D d;
    d.class_name = i % 2 ? "Car" : "Pedestrian";
    d.score = s(rng);
    d.alpha = u(rng) / 20;
    const double x = 600 + 10 * u(rng), y = 150 + u(rng);
    d.box = {x, y, x + 30 + std::abs(u(rng)), y + 20 + std::abs(u(rng))};
    d.h = 1 + s(rng);
    d.w = 1 + s(rng);
    d.l = 3 + s(rng);
    d.location = {u(rng), s(rng), 5 + std::abs(u(rng))};
    d.rotation_y = u(rng) / 20;
    dets.push_back(d);
  }
  const auto back = parse_labels(write_detections(dets));
  REQUIRE(back.size() == dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const auto& a = dets[i];
    const auto& b = back[i];
    CHECK(b.class_name == a.class_name);
    const double pairs[][2] = {{a.alpha, b.alpha},           {a.box.x1, b.box.x1},       {a.box.y2, b.box.y2},
                               {a.h, b.h},                   {a.w, b.w},                 {a.l, b.l},
                               {a.location.x, b.location.x}, {a.location.z, b.location.z}, {a.rotation_y, b.rotation_y}};
    for (const auto& p : pairs) CHECK(std::abs(p[0] - p[1]) <= 0.005 + 1e-9);
    REQUIRE(b.score.has_value());
    CHECK(std::abs(*b.score - a.score) <= 5e-7);
  }
}

TEST_CASE("image_to_tensor normalization and pair loading") {
  const Image black(4, 3, 0);
  const Tensor t = image_to_tensor(black);
  CHECK(t.shape() == Shape{1, 3, 3, 4});
  for (int c = 0; c < 3; ++c) CHECK(t.at(0, c, 2, 3) == doctest::Approx(-kImageMean[c] / kImageStd[c]));
  const Image gray(2, 2, 128);
  const Tensor g = image_to_tensor(gray);
  for (int c = 0; c < 3; ++c) {
    CHECK(g.at(0, c, 0, 0) == doctest::Approx((128.0 / 255.0 - kImageMean[c]) / kImageStd[c]).epsilon(1e-6));
  }
  CHECK_THROWS_AS(load_image_pair(Image(200, 100), Image(201, 100)), InputError);
  CHECK(load_image_pair(Image(20, 10), Image(20, 10)).first.shape() == Shape{1, 3, 10, 20});
}

TEST_CASE("PNG and PPM rasters roundtrip") {
  const fs::path dir = temp_dir();
  Image img(13, 7);
  std::mt19937 rng(1);
  for (auto& v : img.rgb) v = static_cast<std::uint8_t>(rng());
  write_png(img, dir / "a.png");
  write_ppm(img, dir / "a.ppm");
  CHECK(read_image(dir / "a.png") == img);
  CHECK(read_image(dir / "a.ppm") == img);
  std::vector<std::uint16_t> v16(35);
  for (auto& v : v16) v = static_cast<std::uint16_t>(rng());
  write_png16(5, 7, v16, dir / "d.png");
  int w = 0, h = 0;
  CHECK(read_png16(dir / "d.png", w, h) == v16);
  CHECK(w == 5);
  CHECK(h == 7);
  write_text_file(dir / "junk.png", "not an image");
  CHECK_THROWS_AS(read_image(dir / "junk.png"), InputError);
  CHECK_THROWS_AS(read_image(dir / "missing.png"), InputError);
  fs::remove_all(dir);
}

TEST_CASE("luminance rounds half up") {
  Image img(3, 1);
  img.at(0, 0, 0) = 255;  // 76.245 -> 76
  img.at(1, 0, 1) = 255;  // 149.685 -> 150
  img.at(2, 0, 0) = img.at(2, 0, 1) = img.at(2, 0, 2) = 200;
  const GrayImage g = to_luminance(img);
  CHECK(g.at(0, 0) == 76);
  CHECK(g.at(1, 0) == 150);
  CHECK(g.at(2, 0) == 200);
}
