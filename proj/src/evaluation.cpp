// SPDX-License-Identifier: Apache-2.0
#include "stereodet/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

#include "stereodet/error.hpp"
#include "stereodet/geometry.hpp"

namespace stereodet {

bool DifficultyBucket::admits(const ObjectAnnotation& ann) const {
  return ann.box.height() >= min_box_height && ann.occlusion <= max_occlusion && ann.truncation <= max_truncation;
}

const std::vector<DifficultyBucket>& kitti_buckets() {
  static const std::vector<DifficultyBucket> buckets = {
      {"easy", 40.0, 0, 0.15},
      {"moderate", 25.0, 1, 0.30},
      {"hard", 25.0, 2, 0.50},
  };
  return buckets;
}

const DifficultyBucket& bucket_named(const std::string& name) {
  for (const auto& b : kitti_buckets()) {
    if (b.name == name) return b;
  }
  throw InputError("unknown difficulty bucket '" + name + "'");
}

std::vector<DifficultyBucket> bucket_of(const ObjectAnnotation& ann) {
  std::vector<DifficultyBucket> out;
  for (const auto& b : kitti_buckets()) {
    if (b.admits(ann)) out.push_back(b);
  }
  return out;
}

const char* to_string(IouKind kind) {
  switch (kind) {
    case IouKind::k2d: return "2d";
    case IouKind::kBev: return "bev";
    case IouKind::k3d: return "3d";
  }
  return "?";
}

IouKind parse_iou_kind(const std::string& text) {
  if (text == "2d") return IouKind::k2d;
  if (text == "bev") return IouKind::kBev;
  if (text == "3d") return IouKind::k3d;
  throw InputError("unknown IoU kind '" + text + "' (expected 2d, bev or 3d)");
}

namespace {

double overlap(IouKind kind, const Detection3D& d, const ObjectAnnotation& g) {
  switch (kind) {
    case IouKind::k2d: return iou_2d(d.box, g.box);
    case IouKind::kBev: return iou_bev(box3d_of(d).bev(), box3d_of(g).bev());
    case IouKind::k3d: return iou_3d(box3d_of(d), box3d_of(g));
  }
  return 0.0;
}

// Fraction of the detection's box covered by the region.
double covered_fraction(const Box2D& det, const Box2D& region) {
  const double iw = std::min(det.x2, region.x2) - std::max(det.x1, region.x1);
  const double ih = std::min(det.y2, region.y2) - std::max(det.y1, region.y1);
  if (iw <= 0 || ih <= 0 || det.area() <= 0) return 0.0;
  return iw * ih / det.area();
}

struct Scored {
  double score;
  bool tp;
};

struct FrameResult {
  std::vector<Scored> scored;
  std::size_t n_gt = 0;
};

FrameResult evaluate_frame(const std::vector<ObjectAnnotation>& gts, const std::vector<Detection3D>& dets,
                           const ApOptions& opt) {
  FrameResult r;
  std::vector<const ObjectAnnotation*> cls_gt;
  std::vector<char> gt_valid;
  std::vector<const ObjectAnnotation*> dont_care;
  for (const auto& g : gts) {
    if (g.dont_care()) {
      dont_care.push_back(&g);
    } else if (g.class_name == opt.class_name) {
      cls_gt.push_back(&g);
      const bool valid = opt.bucket.admits(g);
      gt_valid.push_back(valid);
      r.n_gt += valid;
    }
  }

  std::vector<const Detection3D*> cls_det;
  for (const auto& d : dets) {
    if (d.class_name == opt.class_name) cls_det.push_back(&d);
  }
  std::stable_sort(cls_det.begin(), cls_det.end(),
                   [](const Detection3D* a, const Detection3D* b) { return a->score > b->score; });

  std::vector<char> taken(cls_gt.size(), 0);
  for (const Detection3D* d : cls_det) {
    int best_valid = -1, best_ignored = -1;
    double iou_valid = 0, iou_ignored = 0;
    for (std::size_t g = 0; g < cls_gt.size(); ++g) {
      if (taken[g]) continue;
      const double iou = overlap(opt.kind, *d, *cls_gt[g]);
      if (iou < opt.iou_threshold) continue;
      if (gt_valid[g] && iou > iou_valid) {
        iou_valid = iou;
        best_valid = static_cast<int>(g);
      } else if (!gt_valid[g] && iou > iou_ignored) {
        iou_ignored = iou;
        best_ignored = static_cast<int>(g);
      }
    }
    if (best_valid >= 0) {
      taken[static_cast<std::size_t>(best_valid)] = 1;
      r.scored.push_back({d->score, true});
      continue;
    }
    if (best_ignored >= 0) {
      taken[static_cast<std::size_t>(best_ignored)] = 1;
      continue;
    }
    if (d->box.height() < opt.bucket.min_box_height) continue;
    const bool in_dont_care = std::any_of(dont_care.begin(), dont_care.end(), [&](const ObjectAnnotation* dc) {
      return covered_fraction(d->box, dc->box) >= 0.5;
    });
    if (in_dont_care) continue;
    r.scored.push_back({d->score, false});
  }
  return r;
}

}  // namespace

double average_precision(std::span<const std::vector<ObjectAnnotation>> ground_truth,
                         std::span<const std::vector<Detection3D>> detections, const ApOptions& opt) {
  if (ground_truth.size() != detections.size()) {
    throw InputError("ground truth has " + std::to_string(ground_truth.size()) + " frames but detections have " +
                     std::to_string(detections.size()));
  }
  if (opt.recall_points != 11 && opt.recall_points != 40) {
    throw InputError("recall points must be 11 or 40, got " + std::to_string(opt.recall_points));
  }
  if (!(opt.iou_threshold >= 0 && opt.iou_threshold <= 1)) throw InputError("IoU threshold must lie in [0, 1]");

  const std::size_t n = ground_truth.size();
  std::vector<FrameResult> frames(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) frames[i] = evaluate_frame(ground_truth[i], detections[i], opt);

  std::size_t n_gt = 0;
  // score -> (tp, fp); descending iteration gives the PR curve at distinct thresholds.
  std::map<double, std::pair<std::size_t, std::size_t>, std::greater<>> by_score;
  for (const auto& f : frames) {
    n_gt += f.n_gt;
    for (const auto& s : f.scored) {
      auto& c = by_score[s.score];
      (s.tp ? c.first : c.second) += 1;
    }
  }
  if (n_gt == 0) {
    throw InvariantError("no '" + opt.class_name + "' ground truth in bucket " + opt.bucket.name +
                         "; average precision is undefined");
  }

  std::vector<std::pair<double, double>> curve;  // (recall, precision)
  std::size_t tp = 0, fp = 0;
  for (const auto& [score, c] : by_score) {
    tp += c.first;
    fp += c.second;
    curve.emplace_back(static_cast<double>(tp) / static_cast<double>(n_gt),
                       static_cast<double>(tp) / static_cast<double>(tp + fp));
  }
  // Running max from the right gives interpolated precision.
  std::vector<double> interp(curve.size());
  double best = 0;
  for (std::size_t i = curve.size(); i-- > 0;) {
    best = std::max(best, curve[i].second);
    interp[i] = best;
  }

  const int points = opt.recall_points;
  double sum = 0;
  for (int k = 0; k < points; ++k) {
    const double r = points == 40 ? (k + 1) / 40.0 : k / 10.0;
    // First curve point with recall >= r (recall is non-decreasing).
    auto it = std::lower_bound(curve.begin(), curve.end(), r - 1e-12,
                               [](const std::pair<double, double>& p, double v) { return p.first < v; });
    if (it != curve.end()) sum += interp[static_cast<std::size_t>(it - curve.begin())];
  }
  return sum / points;
}

std::string format_report(const std::vector<MetricRow>& rows) {
  std::string out;
  char buf[256];
  for (const auto& r : rows) {
    const int n = std::snprintf(buf, sizeof(buf), "%s %s %s@%.2f R%d AP=%.4f\n", r.class_name.c_str(),
                                r.bucket.c_str(), to_string(r.kind), r.iou_threshold, r.recall_points, r.ap);
    out.append(buf, static_cast<std::size_t>(n));
  }
  return out;
}

}  // namespace stereodet
