// SPDX-License-Identifier: Apache-2.0
#include "stereodet/anchors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "json.hpp"

#include "stereodet/error.hpp"
#include "stereodet/geometry.hpp"

namespace stereodet {

// --- grid -------------------------------------------------------------------

std::size_t AnchorSet::index_of(int level, int row, int col, int k) const {
  const AnchorLevel& lv = levels.at(static_cast<std::size_t>(level));
  const auto nk = lv.shape_indices.size();
  return lv.first_anchor + (static_cast<std::size_t>(row) * lv.cols + col) * nk + k;
}

AnchorSet generate_grid(int image_w, int image_h, std::span<const AnchorShape> shapes, std::span<const int> strides) {
  if (image_w <= 0 || image_h <= 0) throw InputError("anchor grid needs a positive image size");
  AnchorSet set;
  set.image_w = image_w;
  set.image_h = image_h;
  set.shapes.assign(shapes.begin(), shapes.end());
  for (const auto& s : shapes) {
    if (!(s.w2d > 0) || !(s.h2d > 0)) throw InputError("anchor shape extents must be positive");
  }
  for (int stride : strides) {
    if (stride <= 0 || image_w % stride != 0 || image_h % stride != 0) {
      throw InputError("stride " + std::to_string(stride) + " does not divide image " + std::to_string(image_w) +
                       "x" + std::to_string(image_h));
    }
    AnchorLevel lv;
    lv.stride = stride;
    lv.rows = image_h / stride;
    lv.cols = image_w / stride;
    lv.first_anchor = set.anchors.size();
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      if (shapes[i].scale_level == stride) lv.shape_indices.push_back(static_cast<int>(i));
    }
    const int level = static_cast<int>(set.levels.size());
    for (int r = 0; r < lv.rows; ++r) {
      for (int c = 0; c < lv.cols; ++c) {
        for (int si : lv.shape_indices) {
          const auto& s = shapes[static_cast<std::size_t>(si)];
          set.anchors.push_back({(c + 0.5) * stride, (r + 0.5) * stride, s.w2d, s.h2d, si, level, r, c});
        }
      }
    }
    set.levels.push_back(std::move(lv));
  }
  return set;
}

std::vector<AnchorShape> make_anchor_shapes(std::span<const double> heights, std::span<const double> ratios,
                                            int scale_level) {
  std::vector<AnchorShape> out;
  for (double h : heights) {
    for (double r : ratios) out.push_back({h * r, h, scale_level, -1});
  }
  return out;
}

// --- assignment -------------------------------------------------------------

namespace {

bool eligible(const ObjectAnnotation& g, const AssignOptions& opt) {
  if (g.dont_care()) return false;
  if (opt.classes.empty()) return true;
  return std::find(opt.classes.begin(), opt.classes.end(), g.class_name) != opt.classes.end();
}

bool shape_accepts(const AnchorShape& s, const ObjectAnnotation& g, const AssignOptions& opt) {
  if (s.class_id < 0) return true;
  const auto id = static_cast<std::size_t>(s.class_id);
  return id < opt.classes.size() && opt.classes[id] == g.class_name;
}

}  // namespace

Assignment assign(const AnchorSet& anchors, std::span<const ObjectAnnotation> gts, const AssignOptions& opt) {
  if (!(opt.neg_iou >= 0 && opt.neg_iou <= opt.pos_iou && opt.pos_iou <= 1)) {
    throw InputError("assignment thresholds must satisfy 0 <= neg_iou <= pos_iou <= 1");
  }
  const std::size_t na = anchors.size();
  Assignment out;
  out.labels.assign(na, kNegativeAnchor);
  out.best_iou.assign(na, 0.0);

  std::vector<char> ok(gts.size());
  for (std::size_t g = 0; g < gts.size(); ++g) ok[g] = eligible(gts[g], opt);

  for (std::size_t a = 0; a < na; ++a) {
    const Anchor& an = anchors.anchors[a];
    const Box2D box = an.box();
    const AnchorShape& shape = anchors.shapes[static_cast<std::size_t>(an.shape_index)];
    double best = 0;
    int arg = -1;
    double dont_care = 0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gts[g].dont_care()) {
        dont_care = std::max(dont_care, iou_2d(box, gts[g].box));
        continue;
      }
      if (!ok[g] || !shape_accepts(shape, gts[g], opt)) continue;
      const double iou = iou_2d(box, gts[g].box);
      if (iou > best) {
        best = iou;
        arg = static_cast<int>(g);
      }
    }
    out.best_iou[a] = best;
    if (arg >= 0 && best >= opt.pos_iou) {
      out.labels[a] = arg;
    } else if (best >= opt.neg_iou || dont_care >= opt.neg_iou) {
      out.labels[a] = kIgnoredAnchor;
    }
  }

  // Every target claims its best-overlapping anchor; later targets win ties.
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (!ok[g]) continue;
    double best = 0;
    std::size_t arg = na;
    for (std::size_t a = 0; a < na; ++a) {
      const AnchorShape& shape = anchors.shapes[static_cast<std::size_t>(anchors.anchors[a].shape_index)];
      if (!shape_accepts(shape, gts[g], opt)) continue;
      const double iou = iou_2d(anchors.anchors[a].box(), gts[g].box);
      if (iou > best) {
        best = iou;
        arg = a;
      }
    }
    if (arg < na) {
      out.labels[arg] = static_cast<int>(g);
      out.best_iou[arg] = std::max(out.best_iou[arg], best);
    }
  }
  return out;
}

// --- priors -------------------------------------------------------------------

void RunningStats::add(double x) {
  ++n_;
  const double d = x - mean_;
  mean_ += d / static_cast<double>(n_);
  m2_ += d * (x - mean_);
}

void RunningStats::merge(const RunningStats& o) {
  if (o.n_ == 0) return;
  if (n_ == 0) {
    *this = o;
    return;
  }
  const double na = static_cast<double>(n_), nb = static_cast<double>(o.n_);
  const double n = na + nb;
  const double d = o.mean_ - mean_;
  mean_ += d * nb / n;
  m2_ += o.m2_ + d * d * na * nb / n;
  n_ += o.n_;
}

const PriorStats* AnchorPriors::find(int shape_index, const std::string& class_name) const {
  auto it = stats.find(class_name);
  if (it == stats.end() || shape_index < 0 || static_cast<std::size_t>(shape_index) >= it->second.size()) {
    return nullptr;
  }
  const PriorStats& p = it->second[static_cast<std::size_t>(shape_index)];
  return p.usable() ? &p : nullptr;
}

const ClassDims* AnchorPriors::find_dims(const std::string& class_name) const {
  auto it = dims.find(class_name);
  return it == dims.end() || it->second.count == 0 ? nullptr : &it->second;
}

int AnchorPriors::class_index(const std::string& class_name) const {
  auto it = std::find(classes.begin(), classes.end(), class_name);
  return it == classes.end() ? -1 : static_cast<int>(it - classes.begin());
}

std::string AnchorPriors::to_json() const {
  using nlohmann::json;
  json j;
  j["schema_version"] = kSchemaVersion;
  j["classes"] = classes;
  json shapes_j = json::array();
  for (const auto& s : shapes) {
    shapes_j.push_back({{"w2d", s.w2d}, {"h2d", s.h2d}, {"scale_level", s.scale_level}, {"class_id", s.class_id}});
  }
  j["shapes"] = shapes_j;
  json priors_j = json::object();
  for (const auto& [cls, per_shape] : stats) {
    json arr = json::array();
    for (const auto& p : per_shape) {
      arr.push_back({{"count", p.count},
                     {"mean_z", p.mean_z},
                     {"var_z", p.var_z},
                     {"mean_sin2a", p.mean_sin2a},
                     {"var_sin2a", p.var_sin2a},
                     {"mean_cos2a", p.mean_cos2a},
                     {"var_cos2a", p.var_cos2a}});
    }
    priors_j[cls] = arr;
  }
  j["priors"] = priors_j;
  json dims_j = json::object();
  for (const auto& [cls, d] : dims) dims_j[cls] = {{"count", d.count}, {"w", d.w}, {"h", d.h}, {"l", d.l}};
  j["dims"] = dims_j;
  return j.dump(2) + "\n";
}

AnchorPriors AnchorPriors::from_json(const std::string& text) {
  using nlohmann::json;
  AnchorPriors p;
  try {
    const json j = json::parse(text);
    const int version = j.at("schema_version").get<int>();
    if (version != kSchemaVersion) {
      throw InputError("unsupported priors schema version " + std::to_string(version));
    }
    p.classes = j.at("classes").get<std::vector<std::string>>();
    for (const auto& s : j.at("shapes")) {
      p.shapes.push_back({s.at("w2d").get<double>(), s.at("h2d").get<double>(), s.at("scale_level").get<int>(),
                          s.at("class_id").get<int>()});
    }
    for (const auto& [cls, arr] : j.at("priors").items()) {
      std::vector<PriorStats> v;
      for (const auto& e : arr) {
        PriorStats ps;
        ps.count = e.at("count").get<std::int64_t>();
        ps.mean_z = e.at("mean_z").get<double>();
        ps.var_z = e.at("var_z").get<double>();
        ps.mean_sin2a = e.at("mean_sin2a").get<double>();
        ps.var_sin2a = e.at("var_sin2a").get<double>();
        ps.mean_cos2a = e.at("mean_cos2a").get<double>();
        ps.var_cos2a = e.at("var_cos2a").get<double>();
        if (ps.count < 0 || ps.var_z < 0 || ps.var_sin2a < 0 || ps.var_cos2a < 0) {
          throw InputError("priors for class '" + cls + "' contain a negative count or variance");
        }
        v.push_back(ps);
      }
      if (v.size() != p.shapes.size()) {
        throw InputError("priors for class '" + cls + "' list " + std::to_string(v.size()) + " shapes, expected " +
                         std::to_string(p.shapes.size()));
      }
      p.stats[cls] = std::move(v);
    }
    for (const auto& [cls, d] : j.at("dims").items()) {
      p.dims[cls] = {d.at("count").get<std::int64_t>(), d.at("w").get<double>(), d.at("h").get<double>(),
                     d.at("l").get<double>()};
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed priors document: ") + e.what());
  }
  return p;
}

namespace {

struct ShapeAccum {
  RunningStats z, s, c;
  void merge(const ShapeAccum& o) {
    z.merge(o.z);
    s.merge(o.s);
    c.merge(o.c);
  }
};

struct DimAccum {
  RunningStats w, h, l;
};

struct FrameAccum {
  std::map<std::string, std::vector<ShapeAccum>> shapes;
  std::map<std::string, DimAccum> dims;
};

}  // namespace

AnchorPriors compute_priors(std::span<const PriorFrame> dataset, const AnchorSet& anchors,
                            const AssignOptions& options) {
  if (dataset.empty()) throw InputError("prior computation needs at least one frame");
  const std::size_t n_shapes = anchors.shapes.size();
  std::vector<FrameAccum> partial(dataset.size());

#pragma omp parallel for schedule(dynamic)
  for (std::size_t f = 0; f < dataset.size(); ++f) {
    const PriorFrame& frame = dataset[f];
    FrameAccum& acc = partial[f];
    for (const auto& g : frame) {
      if (!eligible(g, options)) continue;
      DimAccum& d = acc.dims[g.class_name];
      d.w.add(g.w);
      d.h.add(g.h);
      d.l.add(g.l);
    }
    const Assignment a = assign(anchors, frame, options);
    for (std::size_t i = 0; i < a.labels.size(); ++i) {
      if (a.labels[i] < 0) continue;
      const ObjectAnnotation& g = frame[static_cast<std::size_t>(a.labels[i])];
      auto& per_shape = acc.shapes[g.class_name];
      if (per_shape.empty()) per_shape.resize(n_shapes);
      const auto enc = encode_orientation(g.alpha);
      ShapeAccum& s = per_shape[static_cast<std::size_t>(anchors.anchors[i].shape_index)];
      s.z.add(g.location.z);
      s.s.add(enc.sin2a);
      s.c.add(enc.cos2a);
    }
  }

  std::map<std::string, std::vector<ShapeAccum>> shapes;
  std::map<std::string, DimAccum> dims;
  for (const auto& acc : partial) {
    for (const auto& [cls, v] : acc.shapes) {
      auto& dst = shapes[cls];
      if (dst.empty()) dst.resize(n_shapes);
      for (std::size_t k = 0; k < n_shapes; ++k) dst[k].merge(v[k]);
    }
    for (const auto& [cls, d] : acc.dims) {
      auto& dst = dims[cls];
      dst.w.merge(d.w);
      dst.h.merge(d.h);
      dst.l.merge(d.l);
    }
  }

  AnchorPriors priors;
  if (!options.classes.empty()) {
    priors.classes = options.classes;
  } else {
    std::set<std::string> seen;
    for (const auto& [cls, d] : dims) seen.insert(cls);
    priors.classes.assign(seen.begin(), seen.end());
  }
  priors.shapes = anchors.shapes;
  for (const auto& cls : priors.classes) {
    std::vector<PriorStats> v(n_shapes);
    auto it = shapes.find(cls);
    if (it != shapes.end()) {
      for (std::size_t k = 0; k < n_shapes; ++k) {
        const ShapeAccum& s = it->second[k];
        if (s.z.count() == 0) continue;
        v[k] = {s.z.count(), s.z.mean(), s.z.variance(), s.s.mean(), s.s.variance(), s.c.mean(), s.c.variance()};
      }
    }
    priors.stats[cls] = std::move(v);
    auto dt = dims.find(cls);
    if (dt != dims.end()) {
      priors.dims[cls] = {dt->second.w.count(), dt->second.w.mean(), dt->second.h.mean(), dt->second.l.mean()};
    } else {
      priors.dims[cls] = ClassDims{};
    }
  }
  return priors;
}

// --- ground plane -------------------------------------------------------------

std::vector<AnchorStatus> filter_by_ground_plane(const AnchorSet& anchors, const AnchorPriors& priors,
                                                 const std::string& class_name, const CalibrationPair& calib,
                                                 const GroundPlaneOptions& options) {
  std::vector<AnchorStatus> out(anchors.size(), AnchorStatus::kNoPrior);
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const Anchor& a = anchors.anchors[i];
    const PriorStats* p = priors.find(a.shape_index, class_name);
    if (!p || !(p->mean_z > 0)) continue;
    const Vec3 c = back_project({a.cx, a.cy}, p->mean_z, calib);
    out[i] = std::abs(c.y - options.ground_y) <= options.tolerance ? AnchorStatus::kKept : AnchorStatus::kFarFromGround;
  }
  return out;
}

// --- target encoding ------------------------------------------------------------

double decode_z_alt(double v) {
  if (!std::isfinite(v)) throw InputError("depth output is not finite");
  // 1/sigmoid(v) - 1 == exp(-v)
  return std::exp(-v);
}

double encode_z_alt(double z) {
  if (!(z > 0) || !std::isfinite(z)) throw InputError("depth must be positive and finite");
  return -std::log(z);
}

namespace {

double normalize(double v, double mean, double var, double eps) { return (v - mean) / std::sqrt(var + eps); }
double denormalize(double r, double mean, double var, double eps) { return mean + r * std::sqrt(var + eps); }

}  // namespace

AnchorTarget encode_targets(const ObjectAnnotation& gt, const Anchor& anchor, const AnchorPriors& priors,
                            const CalibrationPair& calib, const EncodingOptions& opt) {
  if (!(gt.h > 0) || !(gt.w > 0) || !(gt.l > 0)) throw InputError("ground-truth dimensions must be positive");
  if (!(gt.box.width() > 0) || !(gt.box.height() > 0)) throw InputError("ground-truth 2D box is empty");
  const int cls = priors.class_index(gt.class_name);
  if (cls < 0) throw InputError("no priors for class '" + gt.class_name + "'");
  const PriorStats* p = priors.find(anchor.shape_index, gt.class_name);
  if (!p) throw InputError("no usable prior for anchor shape " + std::to_string(anchor.shape_index));
  const ClassDims* d = priors.find_dims(gt.class_name);
  if (!d) throw InputError("no mean dimensions for class '" + gt.class_name + "'");

  AnchorTarget t;
  t.class_index = cls;
  auto& r = t.reg;
  r[kRegX2d] = (gt.box.center_x() - anchor.cx) / anchor.w;
  r[kRegY2d] = (gt.box.center_y() - anchor.cy) / anchor.h;
  r[kRegW2d] = std::log(gt.box.width() / anchor.w);
  r[kRegH2d] = std::log(gt.box.height() / anchor.h);
  const Pixel c = project_to_image({gt.location.x, gt.location.y - 0.5 * gt.h, gt.location.z}, calib.P2);
  r[kRegCx] = (c.u - anchor.cx) / anchor.w;
  r[kRegCy] = (c.v - anchor.cy) / anchor.h;
  r[kRegZ] = opt.depth == DepthEncoding::kPriorNormalized ? normalize(gt.location.z, p->mean_z, p->var_z, opt.eps)
                                                          : encode_z_alt(gt.location.z);
  r[kRegW3d] = std::log(gt.w / d->w);
  r[kRegH3d] = std::log(gt.h / d->h);
  r[kRegL3d] = std::log(gt.l / d->l);
  const auto o = encode_orientation(gt.alpha);
  r[kRegSin2a] = normalize(o.sin2a, p->mean_sin2a, p->var_sin2a, opt.eps);
  r[kRegCos2a] = normalize(o.cos2a, p->mean_cos2a, p->var_cos2a, opt.eps);
  t.facing = o.facing;
  return t;
}

Detection3D decode_anchor(const RegressionVector& r, bool facing, const Anchor& anchor, const PriorStats& p,
                          const ClassDims& dims, const CalibrationPair& calib, const EncodingOptions& opt) {
  Detection3D det;
  const double bcx = anchor.cx + r[kRegX2d] * anchor.w;
  const double bcy = anchor.cy + r[kRegY2d] * anchor.h;
  const double bw = anchor.w * std::exp(r[kRegW2d]);
  const double bh = anchor.h * std::exp(r[kRegH2d]);
  det.box = {bcx - 0.5 * bw, bcy - 0.5 * bh, bcx + 0.5 * bw, bcy + 0.5 * bh};
  const double z = opt.depth == DepthEncoding::kPriorNormalized ? denormalize(r[kRegZ], p.mean_z, p.var_z, opt.eps)
                                                                : decode_z_alt(r[kRegZ]);
  if (!(z > 0)) throw InputError("decoded depth is not positive");
  det.w = dims.w * std::exp(r[kRegW3d]);
  det.h = dims.h * std::exp(r[kRegH3d]);
  det.l = dims.l * std::exp(r[kRegL3d]);
  const Pixel c{anchor.cx + r[kRegCx] * anchor.w, anchor.cy + r[kRegCy] * anchor.h};
  const Vec3 center = back_project(c, z, calib.P2);
  det.location = {center.x, center.y + 0.5 * det.h, center.z};
  OrientationEncoding o;
  o.sin2a = denormalize(r[kRegSin2a], p.mean_sin2a, p.var_sin2a, opt.eps);
  o.cos2a = denormalize(r[kRegCos2a], p.mean_cos2a, p.var_cos2a, opt.eps);
  o.facing = facing;
  det.alpha = decode_orientation(o);
  det.rotation_y = alpha_to_ry(det.alpha, det.location.x, det.location.z);
  return det;
}

namespace {

bool finite_detection(const Detection3D& d) {
  const double v[] = {d.alpha, d.box.x1, d.box.y1, d.box.x2, d.box.y2, d.h, d.w, d.l,
                      d.location.x, d.location.y, d.location.z, d.rotation_y, d.score};
  return std::all_of(std::begin(v), std::end(v), [](double x) { return std::isfinite(x); });
}

}  // namespace

DecodeResult decode_predictions(const HeadOutputs& out, const AnchorSet& anchors, int level,
                                const AnchorPriors& priors, const CalibrationPair& calib,
                                const DecodeOptions& opt) {
  if (level < 0 || static_cast<std::size_t>(level) >= anchors.levels.size()) {
    throw InputError("anchor level " + std::to_string(level) + " does not exist");
  }
  const AnchorLevel& lv = anchors.levels[static_cast<std::size_t>(level)];
  const auto A = static_cast<std::int64_t>(lv.shape_indices.size());
  const auto K = static_cast<std::int64_t>(priors.classes.size());
  if (K == 0) throw InputError("priors list no classes");
  require_rank4(out.cls, "classification output");
  require_rank4(out.reg, "regression output");
  const Shape want_cls{1, A * K, lv.rows, lv.cols};
  const Shape want_reg{1, A * kRegChannelsPerAnchor, lv.rows, lv.cols};
  if (out.cls.shape() != want_cls) {
    throw ShapeError("classification output is " + to_string(out.cls.shape()) + ", expected " + to_string(want_cls));
  }
  if (out.reg.shape() != want_reg) {
    throw ShapeError("regression output is " + to_string(out.reg.shape()) + ", expected " + to_string(want_reg));
  }
  if (opt.class_masks && opt.class_masks->size() != static_cast<std::size_t>(K)) {
    throw InputError("class mask count does not match the number of classes");
  }

  DecodeResult res;
  const std::int64_t plane = static_cast<std::int64_t>(lv.rows) * lv.cols;
  for (int row = 0; row < lv.rows; ++row) {
    for (int col = 0; col < lv.cols; ++col) {
      const std::int64_t px = static_cast<std::int64_t>(row) * lv.cols + col;
      for (std::int64_t k = 0; k < A; ++k) {
        bool finite = true;
        double best = -std::numeric_limits<double>::infinity();
        int cls = 0;
        for (std::int64_t c = 0; c < K; ++c) {
          const double v = out.cls.data()[(k * K + c) * plane + px];
          if (!std::isfinite(v)) finite = false;
          if (v > best) {
            best = v;
            cls = static_cast<int>(c);
          }
        }
        RegressionVector reg{};
        for (int j = 0; j < kNumRegression; ++j) {
          reg[static_cast<std::size_t>(j)] = out.reg.data()[(k * kRegChannelsPerAnchor + j) * plane + px];
          if (!std::isfinite(reg[static_cast<std::size_t>(j)])) finite = false;
        }
        const double facing_logit = out.reg.data()[(k * kRegChannelsPerAnchor + kNumRegression) * plane + px];
        if (!std::isfinite(facing_logit)) finite = false;
        if (!finite) {
          ++res.dropped_nonfinite;
          continue;
        }
        const double score = 1.0 / (1.0 + std::exp(-best));
        if (score < opt.score_threshold) continue;

        const std::size_t ai = anchors.index_of(level, row, col, static_cast<int>(k));
        const Anchor& anchor = anchors.anchors[ai];
        const std::string& cls_name = priors.classes[static_cast<std::size_t>(cls)];
        if (opt.class_masks && (*opt.class_masks)[static_cast<std::size_t>(cls)].at(ai) != AnchorStatus::kKept) {
          ++res.masked;
          continue;
        }
        const PriorStats* p = priors.find(anchor.shape_index, cls_name);
        const ClassDims* d = priors.find_dims(cls_name);
        if (!p || !d) {
          ++res.masked;
          continue;
        }
        Detection3D det;
        try {
          det = decode_anchor(reg, facing_logit > 0, anchor, *p, *d, calib, opt.encoding);
        } catch (const InputError&) {
          ++res.dropped_nonfinite;
          continue;
        }
        det.class_name = cls_name;
        det.score = score;
        if (!finite_detection(det)) {
          ++res.dropped_nonfinite;
          continue;
        }
        res.detections.push_back(std::move(det));
      }
    }
  }
  return res;
}

}  // namespace stereodet
