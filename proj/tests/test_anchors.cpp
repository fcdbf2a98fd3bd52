// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "stereodet/anchors.hpp"
#include "stereodet/error.hpp"
#include "stereodet/geometry.hpp"

using namespace stereodet;

namespace {

CalibrationPair pinhole(double f, double cx, double cy) {
  return CalibrationPair::from_matrices({f, 0, cx, 0, 0, f, cy, 0, 0, 0, 1, 0},
                                        {f, 0, cx, -0.54 * f, 0, f, cy, 0, 0, 0, 1, 0});
}

ObjectAnnotation object(const std::string& cls, const Box2D& box, double z, double alpha = 0.3) {
  ObjectAnnotation a;
  a.class_name = cls;
  a.box = box;
  a.h = 1.5;
  a.w = 1.6;
  a.l = 3.9;
  a.location = {1, 1.65, z};
  a.alpha = alpha;
  a.rotation_y = alpha_to_ry(alpha, 1, z);
  return a;
}

AnchorSet single_level(int w, int h, int stride, std::vector<AnchorShape> shapes) {
  const int strides[] = {stride};
  return generate_grid(w, h, shapes, strides);
}

AnchorPriors simple_priors(std::size_t n_shapes, double mean_z, double var_z) {
  AnchorPriors p;
  p.classes = {"Car"};
  p.shapes.assign(n_shapes, AnchorShape{32, 32, 16, -1});
  PriorStats s;
  s.count = 5;
  s.mean_z = mean_z;
  s.var_z = var_z;
  s.mean_sin2a = 0.1;
  s.var_sin2a = 0.2;
  s.mean_cos2a = 0.3;
  s.var_cos2a = 0.25;
  p.stats["Car"].assign(n_shapes, s);
  p.dims["Car"] = ClassDims{5, 1.6, 1.5, 3.9};
  return p;
}

}  // namespace

TEST_CASE("generate_grid examples") {
  const auto one = single_level(16, 16, 16, {AnchorShape{10, 10, 16, -1}});
  REQUIRE(one.size() == 1);
  CHECK(one.anchors[0].cx == 8);
  CHECK(one.anchors[0].cy == 8);

  const auto eight = single_level(32, 32, 16, {AnchorShape{10, 10, 16, -1}, AnchorShape{20, 10, 16, -1}});
  CHECK(eight.size() == 8);
  // Ordering (row, col, shape).
  CHECK(eight.anchors[1].shape_index == 1);
  CHECK(eight.anchors[2].cx == 24);
  CHECK(eight.anchors[4].cy == 24);
  CHECK(eight.index_of(0, 1, 0, 1) == 5);

  std::vector<AnchorShape> shapes;
  const int strides[] = {4, 8, 16};
  const double heights[] = {20, 40, 80};
  const double ratios[] = {0.5, 1.0, 2.0};
  for (int s : strides) {
    const auto level = make_anchor_shapes(std::span(heights, 1), ratios, s);
    shapes.insert(shapes.end(), level.begin(), level.end());
  }
  const auto kitti = generate_grid(1280, 288, shapes, strides);
  std::size_t want = 0;
  for (int s : strides) want += static_cast<std::size_t>(288 / s) * (1280 / s) * 3;
  CHECK(kitti.size() == want);
  CHECK_THROWS_AS(single_level(30, 32, 16, {AnchorShape{10, 10, 16, -1}}), InputError);
}

TEST_CASE("make_anchor_shapes uses w = h * ratio") {
  const double h[] = {10, 20};
  const double r[] = {0.5, 2};
  const auto s = make_anchor_shapes(h, r, 8);
  REQUIRE(s.size() == 4);
  for (const auto& x : s) {
    CHECK(x.scale_level == 8);
    CHECK(x.w2d > 0);
  }
  CHECK(s[0].w2d / s[0].h2d != s[1].w2d / s[1].h2d);
}

TEST_CASE("assign examples") {
  const auto grid = single_level(64, 32, 16, {AnchorShape{16, 16, 16, -1}});
  const auto& a0 = grid.anchors[0];
  const std::vector<ObjectAnnotation> gts = {object("Car", a0.box(), 10),
                                             object("Car", {100, 100, 120, 120}, 10)};  // off the grid
  const auto res = assign(grid, gts, {});
  CHECK(res.labels[0] == 0);
  CHECK(res.labels[7] == kNegativeAnchor);
  CHECK(res.labels[3] == kNegativeAnchor);

  // Crafted 3-anchor, 2-GT case: both GTs overlap anchor 1 most strongly, the
  // second GT more so; GT 0 force-claims anchor 0.
  AnchorSet three;
  three.image_w = 100;
  three.image_h = 20;
  three.shapes = {AnchorShape{20, 20, 16, -1}};
  for (int i = 0; i < 3; ++i) three.anchors.push_back(Anchor{10.0 + 15 * i, 10, 20, 20, 0, 0, 0, i});
  const std::vector<ObjectAnnotation> two = {object("Car", {8, 0, 28, 20}, 10), object("Car", {24, 0, 44, 20}, 12)};
  const auto got = assign(three, two, {});
  CHECK(got.labels == oracle::assign(three, two, 0.5, 0.4));
}

TEST_CASE("assign matches exhaustive oracle on random scenes") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> x(0, 240), y(0, 100), s(8, 60);
  const auto grid =
      single_level(256, 128, 16, {AnchorShape{16, 16, 16, -1}, AnchorShape{32, 16, 16, -1}, AnchorShape{48, 48, 16, -1}});
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ObjectAnnotation> gts;
    const int n = static_cast<int>(rng() % 6);
    for (int i = 0; i < n; ++i) {
      const double x1 = x(rng), y1 = y(rng);
      gts.push_back(object(i == 4 ? "DontCare" : "Car", {x1, y1, x1 + s(rng), y1 + s(rng)}, 10));
    }
    AssignOptions o;
    o.pos_iou = 0.5 + 0.05 * (trial % 5);
    o.neg_iou = 0.3;
    const auto got = assign(grid, gts, o);
    CHECK(got.labels == oracle::assign(grid, gts, o.pos_iou, o.neg_iou));
  }
}

TEST_CASE("compute_priors examples") {
  const auto grid = single_level(64, 32, 16, {AnchorShape{16, 16, 16, -1}});
  const Box2D b = grid.anchors[0].box();
  SUBCASE("constant depth") {
    const std::vector<PriorFrame> data = {{object("Car", b, 20)}, {object("Car", b, 20)}};
    const auto p = compute_priors(data, grid, {});
    REQUIRE(p.find(0, "Car"));
    CHECK(p.find(0, "Car")->mean_z == 20);
    CHECK(p.find(0, "Car")->var_z == 0);
  }
  SUBCASE("two depths give population variance") {
    const std::vector<PriorFrame> data = {{object("Car", b, 10)}, {object("Car", b, 30)}};
    const auto p = compute_priors(data, grid, {});
    CHECK(p.find(0, "Car")->count == 2);
    CHECK(p.find(0, "Car")->mean_z == doctest::Approx(20));
    CHECK(p.find(0, "Car")->var_z == doctest::Approx(100));
  }
  SUBCASE("classes get separate tables") {
    const Box2D b2 = grid.anchors[3].box();
    const std::vector<PriorFrame> data = {{object("Car", b, 10), object("Pedestrian", b2, 7)},
                                          {object("Car", b, 30)}};
    const auto p = compute_priors(data, grid, {});
    CHECK(p.classes == std::vector<std::string>{"Car", "Pedestrian"});
    CHECK(p.find(0, "Car")->count == 2);
    REQUIRE(p.find(0, "Pedestrian") != nullptr);
    CHECK(p.find(0, "Cyclist") == nullptr);
    CHECK(p.stats.at("Pedestrian")[0].count == 1);
    CHECK(p.stats.at("Pedestrian")[0].mean_z == 7);
    CHECK(p.stats.at("Car")[0].mean_z == doctest::Approx(20));
  }
  const std::vector<PriorFrame> empty;
  CHECK_THROWS_AS(compute_priors(empty, grid, {}), InputError);
}

TEST_CASE("priors: shuffle invariance, two-pass variance, bounds, JSON roundtrip") {
  std::mt19937_64 rng(77);
  const std::vector<AnchorShape> shapes = {AnchorShape{24, 24, 16, -1}, AnchorShape{48, 32, 16, -1}};
  const auto grid = single_level(256, 128, 16, shapes);
  std::uniform_real_distribution<double> x(0, 200), y(0, 80), s(16, 56), z(3, 70), al(-3, 3);
  std::vector<PriorFrame> data(60);
  for (auto& f : data) {
    const int n = 1 + static_cast<int>(rng() % 4);
    for (int i = 0; i < n; ++i) {
      const double x1 = x(rng), y1 = y(rng);
      f.push_back(object(i % 3 == 2 ? "Pedestrian" : "Car", {x1, y1, x1 + s(rng), y1 + s(rng)}, z(rng), al(rng)));
    }
  }
  const auto base = compute_priors(data, grid, {});

  // Independent two-pass statistics from the assignment itself.
  std::map<std::pair<std::string, int>, std::vector<double>> zs;
  for (const auto& f : data) {
    const auto a = assign(grid, f, {});
    for (std::size_t i = 0; i < a.labels.size(); ++i)
      if (a.labels[i] >= 0) zs[{f[a.labels[i]].class_name, grid.anchors[i].shape_index}].push_back(f[a.labels[i]].location.z);
  }
  REQUIRE_FALSE(zs.empty());
  for (const auto& [key, v] : zs) {
    const PriorStats* p = base.find(key.second, key.first);
    REQUIRE(p);
    const auto mv = oracle::two_pass(v);
    CHECK(p->count == static_cast<std::int64_t>(v.size()));
    CHECK(p->mean_z == doctest::Approx(mv.mean).epsilon(1e-9));
    CHECK(p->var_z == doctest::Approx(mv.var).epsilon(1e-9));
    CHECK(p->var_z >= 0);
    CHECK(p->mean_z >= *std::min_element(v.begin(), v.end()));
    CHECK(p->mean_z <= *std::max_element(v.begin(), v.end()));
  }

  for (int trial = 0; trial < 5; ++trial) {
    auto shuffled = data;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto other = compute_priors(shuffled, grid, {});
    CHECK(other.classes == base.classes);
    for (const auto& [cls, v] : base.stats)
      for (std::size_t k = 0; k < v.size(); ++k) {
        const auto& a = v[k];
        const auto& b = other.stats.at(cls)[k];
        CHECK(a.count == b.count);
        CHECK(b.mean_z == doctest::Approx(a.mean_z).epsilon(1e-9));
        CHECK(b.var_z == doctest::Approx(a.var_z).epsilon(1e-9));
        CHECK(b.mean_sin2a == doctest::Approx(a.mean_sin2a).epsilon(1e-9));
        CHECK(b.var_cos2a == doctest::Approx(a.var_cos2a).epsilon(1e-9));
      }
  }

  const auto again = AnchorPriors::from_json(base.to_json());
  CHECK(again == base);
  CHECK_THROWS_AS(AnchorPriors::from_json("{}"), InputError);
  CHECK_THROWS_AS(AnchorPriors::from_json("not json"), InputError);
}

TEST_CASE("RunningStats merge equals sequential accumulation") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(1e4, 3);
  std::vector<double> v(1000);
  for (auto& x : v) x = n(rng);
  RunningStats all, left, right;
  for (std::size_t i = 0; i < v.size(); ++i) {
    all.add(v[i]);
    (i < 400 ? left : right).add(v[i]);
  }
  left.merge(right);
  const auto mv = oracle::two_pass(v);
  CHECK(left.count() == 1000);
  CHECK(left.mean() == doctest::Approx(mv.mean).epsilon(1e-12));
  CHECK(left.variance() == doctest::Approx(mv.var).epsilon(1e-9));
  CHECK(all.variance() == doctest::Approx(mv.var).epsilon(1e-9));
}

TEST_CASE("filter_by_ground_plane") {
  const CalibrationPair calib = pinhole(100, 50, 50);
  AnchorSet set;
  set.image_w = 100;
  set.image_h = 100;
  set.shapes = {AnchorShape{10, 10, 16, -1}, AnchorShape{10, 10, 16, -1}};
  set.anchors = {Anchor{50, 70, 10, 10, 0}, Anchor{50, 90, 10, 10, 0}, Anchor{50, 66.5, 10, 10, 0},
                 Anchor{50, 70, 10, 10, 1}};
  auto priors = simple_priors(2, 10, 4);
  priors.stats["Car"][1].count = 0;  // unusable shape
  const auto mask = filter_by_ground_plane(set, priors, "Car", calib, {1.65, 1.0});
  CHECK(mask[0] == AnchorStatus::kKept);          // y = 2.0
  CHECK(mask[1] == AnchorStatus::kFarFromGround);  // y = 4.0
  CHECK(mask[2] == AnchorStatus::kKept);          // y = 1.65 exactly
  CHECK(mask[3] == AnchorStatus::kNoPrior);
  const auto inf = filter_by_ground_plane(set, priors, "Car", calib, {1.65, std::numeric_limits<double>::infinity()});
  CHECK(inf == std::vector<AnchorStatus>{AnchorStatus::kKept, AnchorStatus::kKept, AnchorStatus::kKept,
                                         AnchorStatus::kNoPrior});
  const auto unknown = filter_by_ground_plane(set, priors, "Cyclist", calib, {});
  CHECK(std::all_of(unknown.begin(), unknown.end(), [](AnchorStatus s) { return s == AnchorStatus::kNoPrior; }));
}

TEST_CASE("z_alt transform") {
  CHECK(decode_z_alt(0) == doctest::Approx(1.0));
  CHECK(encode_z_alt(1.0) == 0.0);
  for (double z : {0.5, 5.0, 50.0}) CHECK(std::abs(decode_z_alt(encode_z_alt(z)) - z) < 1e-9);
  CHECK(decode_z_alt(2.0) == doctest::Approx(1.0 / (1.0 / (1.0 + std::exp(-2.0))) - 1.0).epsilon(1e-12));
  CHECK_THROWS_AS(encode_z_alt(0), InputError);
  CHECK_THROWS_AS(encode_z_alt(-1), InputError);
}

TEST_CASE("encode_targets examples") {
  const CalibrationPair calib = pinhole(700, 320, 160);
  const auto priors = simple_priors(1, 20, 25);
  const Anchor anchor{300, 150, 60, 40, 0};
  ObjectAnnotation gt = object("Car", anchor.box(), 20);
  gt.alpha = 0.5 * std::atan2(0.1, 0.3);  // (sin2a, cos2a) direction of the prior means
  const auto t = encode_targets(gt, anchor, priors, calib);
  CHECK(std::abs(t.reg[kRegX2d]) < 1e-12);
  CHECK(std::abs(t.reg[kRegW2d]) < 1e-12);
  CHECK(std::abs(t.reg[kRegZ]) < 1e-12);
  CHECK(std::abs(t.reg[kRegW3d]) < 1e-12);
  CHECK(std::abs(t.reg[kRegL3d]) < 1e-12);

  gt.location.z = 20 + 5;
  CHECK(encode_targets(gt, anchor, priors, calib).reg[kRegZ] == doctest::Approx(5 / std::sqrt(25 + 1e-3)));
  CHECK(encode_targets(gt, anchor, priors, calib).reg[kRegZ] == doctest::Approx(1.0).epsilon(1e-4));
  gt.h = 0;
  CHECK_THROWS_AS(encode_targets(gt, anchor, priors, calib), InputError);
}

TEST_CASE("encode/decode roundtrip on random boxes") {
  std::mt19937_64 rng(1234);
  std::uniform_real_distribution<double> u(0, 1), ang(-kPi + 1e-3, kPi);
  const CalibrationPair calib =
      CalibrationPair::from_matrices({721.5, 0, 609.6, 44.9, 0, 721.5, 172.9, 0.2, 0, 0, 1, 0.003},
                                     {721.5, 0, 609.6, -339.5, 0, 721.5, 172.9, 2.2, 0, 0, 1, 0.003});
  for (DepthEncoding depth : {DepthEncoding::kPriorNormalized, DepthEncoding::kInverseSigmoid}) {
    double worst = 0;
    for (int i = 0; i < 2000; ++i) {
      auto priors = simple_priors(1, 5 + 50 * u(rng), 1 + 100 * u(rng));
      auto& s = priors.stats["Car"][0];
      s.mean_sin2a = 2 * u(rng) - 1;
      s.var_sin2a = u(rng);
      s.mean_cos2a = 2 * u(rng) - 1;
      s.var_cos2a = u(rng);
      const Anchor anchor{1200 * u(rng), 370 * u(rng), 10 + 100 * u(rng), 10 + 100 * u(rng), 0};
      double alpha = ang(rng);
      if (std::abs(std::abs(alpha) - kPi / 2) < 1e-4) alpha += 1e-3;
      const double x1 = 1200 * u(rng), y1 = 370 * u(rng);
      ObjectAnnotation gt = object("Car", {x1, y1, x1 + 5 + 200 * u(rng), y1 + 5 + 100 * u(rng)}, 2 + 70 * u(rng), alpha);
      gt.location.x = 20 * u(rng) - 10;
      gt.location.y = 1 + u(rng);
      gt.h = 0.5 + 2 * u(rng);
      gt.w = 0.5 + 2 * u(rng);
      gt.l = 0.5 + 4 * u(rng);
      EncodingOptions eo;
      eo.depth = depth;
      const auto t = encode_targets(gt, anchor, priors, calib, eo);
      const auto d = decode_anchor(t.reg, t.facing, anchor, s, priors.dims["Car"], calib, eo);
      const double diffs[] = {d.box.x1 - gt.box.x1, d.box.y1 - gt.box.y1, d.box.x2 - gt.box.x2,
                              d.box.y2 - gt.box.y2, d.location.x - gt.location.x, d.location.y - gt.location.y,
                              d.location.z - gt.location.z, d.h - gt.h, d.w - gt.w, d.l - gt.l,
                              wrap_angle(d.alpha - gt.alpha)};
      for (double v : diffs) worst = std::max(worst, std::abs(v));
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("decode_predictions") {
  const CalibrationPair calib = pinhole(700, 320, 160);
  const std::vector<AnchorShape> shapes = {AnchorShape{32, 32, 16, -1}, AnchorShape{64, 32, 16, -1}};
  const auto grid = single_level(64, 32, 16, shapes);
  const auto priors = simple_priors(2, 20, 25);
  const int A = 2, rows = 2, cols = 4;
  HeadOutputs out{Tensor({1, A, rows, cols}, -10.0f), Tensor({1, A * kRegChannelsPerAnchor, rows, cols}, 0.0f)};
  out.cls.at(0, 1, 1, 2) = 3.0f;  // shape 1 at row 1, col 2
  DecodeOptions o;
  o.score_threshold = 0.5;

  const auto res = decode_predictions(out, grid, 0, priors, calib, o);
  REQUIRE(res.detections.size() == 1);
  const auto& d = res.detections[0];
  const Anchor& a = grid.anchors[grid.index_of(0, 1, 2, 1)];
  CHECK(d.class_name == "Car");
  CHECK(d.score == doctest::Approx(1.0 / (1.0 + std::exp(-3.0))));
  CHECK(d.box.x1 == doctest::Approx(a.box().x1));
  CHECK(d.box.y2 == doctest::Approx(a.box().y2));
  CHECK(d.location.z == doctest::Approx(20));
  CHECK(d.h == doctest::Approx(1.5));
  CHECK(d.l == doctest::Approx(3.9));

  o.score_threshold = 1.1;
  CHECK(decode_predictions(out, grid, 0, priors, calib, o).detections.empty());

  o.score_threshold = 0.5;
  out.reg.at(0, 1 * kRegChannelsPerAnchor + kRegZ, 1, 2) = std::numeric_limits<float>::quiet_NaN();
  const auto nan = decode_predictions(out, grid, 0, priors, calib, o);
  CHECK(nan.detections.empty());
  CHECK(nan.dropped_nonfinite == 1);

  // Roundtrip through float channels.
  out.reg = Tensor(out.reg.shape(), 0.0f);
  ObjectAnnotation gt = object("Car", {150, 40, 230, 90}, 27, 2.2);
  const auto t = encode_targets(gt, a, priors, calib);
  for (int j = 0; j < kNumRegression; ++j) out.reg.at(0, kRegChannelsPerAnchor + j, 1, 2) = static_cast<float>(t.reg[j]);
  out.reg.at(0, kRegChannelsPerAnchor + kNumRegression, 1, 2) = t.facing ? 5.0f : -5.0f;
  const auto rt = decode_predictions(out, grid, 0, priors, calib, o);
  REQUIRE(rt.detections.size() == 1);
  const auto& r = rt.detections[0];
  CHECK(std::abs(r.location.z - gt.location.z) < 1e-4);
  CHECK(std::abs(r.location.x - gt.location.x) < 1e-4);
  CHECK(std::abs(r.box.x1 - gt.box.x1) < 1e-3);
  CHECK(std::abs(wrap_angle(r.alpha - gt.alpha)) < 1e-4);

  // Masking.
  std::vector<std::vector<AnchorStatus>> masks = {std::vector<AnchorStatus>(grid.size(), AnchorStatus::kFarFromGround)};
  o.class_masks = &masks;
  const auto masked = decode_predictions(out, grid, 0, priors, calib, o);
  CHECK(masked.detections.empty());
  CHECK(masked.masked == 1);
}
