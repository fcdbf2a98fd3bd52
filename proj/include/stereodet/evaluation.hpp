// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include "stereodet/types.hpp"

namespace stereodet {

struct DifficultyBucket {
  std::string name;
  double min_box_height = 0;  // pixels
  int max_occlusion = 0;
  double max_truncation = 0;

  bool admits(const ObjectAnnotation& ann) const;
  bool operator==(const DifficultyBucket&) const = default;
};

/// easy (40 px, occ 0, trunc 0.15), moderate (25, 1, 0.30), hard (25, 2, 0.50).
const std::vector<DifficultyBucket>& kitti_buckets();
const DifficultyBucket& bucket_named(const std::string& name);

/// Every bucket whose thresholds the annotation satisfies.
std::vector<DifficultyBucket> bucket_of(const ObjectAnnotation& ann);

enum class IouKind { k2d, kBev, k3d };

const char* to_string(IouKind kind);
IouKind parse_iou_kind(const std::string& text);

struct ApOptions {
  IouKind kind = IouKind::k3d;
  double iou_threshold = 0.7;
  DifficultyBucket bucket = kitti_buckets()[1];
  int recall_points = 40;     // 40 or 11
  std::string class_name = "Car";
};

/// Per-frame greedy matching by descending score (one detection per ground
/// truth), then interpolated precision averaged over equally spaced recall
/// levels. Ground truth outside the bucket, and detections matching it, are
/// ignored; detections lying inside DontCare regions are dropped. Throws
/// InvariantError if no ground truth of the class falls in the bucket.
double average_precision(std::span<const std::vector<ObjectAnnotation>> ground_truth,
                         std::span<const std::vector<Detection3D>> detections, const ApOptions& options);

struct MetricRow {
  std::string class_name;
  std::string bucket;
  IouKind kind = IouKind::k3d;
  double iou_threshold = 0;
  int recall_points = 40;
  double ap = 0;
};

/// One line per row: "<class> <bucket> <kind>@<thr> R<points> AP=<value>".
std::string format_report(const std::vector<MetricRow>& rows);

}  // namespace stereodet
