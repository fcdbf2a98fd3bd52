// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "stereodet/tensor.hpp"
#include "stereodet/types.hpp"

namespace stereodet {

// --- grid -------------------------------------------------------------------

struct AnchorShape {
  double w2d = 0, h2d = 0;  // pixels
  int scale_level = 16;     // stride of the feature map it tiles: 4, 8 or 16
  int class_id = -1;        // -1: shared by all classes

  bool operator==(const AnchorShape&) const = default;
};

struct Anchor {
  double cx = 0, cy = 0, w = 0, h = 0;
  int shape_index = 0;
  int level = 0;  // index into AnchorSet::levels
  int row = 0, col = 0;

  Box2D box() const { return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h}; }
};

struct AnchorLevel {
  int stride = 0;
  int rows = 0, cols = 0;
  std::size_t first_anchor = 0;
  std::vector<int> shape_indices;  // shapes tiled at this level, in order
};

/// Anchors ordered by (level, row, col, shape).
struct AnchorSet {
  int image_w = 0, image_h = 0;
  std::vector<AnchorShape> shapes;
  std::vector<AnchorLevel> levels;
  std::vector<Anchor> anchors;

  std::size_t size() const { return anchors.size(); }
  /// Index of the anchor for (level, row, col, k-th shape of that level).
  std::size_t index_of(int level, int row, int col, int k) const;
};

/// Throws InputError when a stride does not divide the image dimensions.
AnchorSet generate_grid(int image_w, int image_h, std::span<const AnchorShape> shapes,
                        std::span<const int> strides);

/// Shapes from heights x aspect ratios (w/h) at one scale level.
std::vector<AnchorShape> make_anchor_shapes(std::span<const double> heights, std::span<const double> ratios,
                                            int scale_level);

// --- assignment -------------------------------------------------------------

inline constexpr int kNegativeAnchor = -1;
inline constexpr int kIgnoredAnchor = -2;

struct AssignOptions {
  double pos_iou = 0.5;
  double neg_iou = 0.4;
  /// Classes eligible as targets; empty admits every non-DontCare class.
  /// Shapes with class_id >= 0 only take ground truth of classes[class_id].
  std::vector<std::string> classes;
};

struct Assignment {
  std::vector<int> labels;  // ground-truth index, kNegativeAnchor or kIgnoredAnchor
  std::vector<double> best_iou;
};

/// Max-IoU matching. Anchors overlapping a DontCare region by >= neg_iou are
/// ignored instead of negative; each target also claims its best anchor.
Assignment assign(const AnchorSet& anchors, std::span<const ObjectAnnotation> ground_truth,
                  const AssignOptions& options);

// --- priors -------------------------------------------------------------------

/// Single-pass mean/variance accumulator with order-stable merging.
class RunningStats {
 public:
  void add(double x);
  void merge(const RunningStats& other);
  std::int64_t count() const { return n_; }
  double mean() const { return mean_; }
  /// Population variance.
  double variance() const { return n_ > 0 ? m2_ / static_cast<double>(n_) : 0.0; }

 private:
  std::int64_t n_ = 0;
  double mean_ = 0;
  double m2_ = 0;
};

struct PriorStats {
  std::int64_t count = 0;
  double mean_z = 0, var_z = 0;
  double mean_sin2a = 0, var_sin2a = 0;
  double mean_cos2a = 0, var_cos2a = 1;

  bool usable() const { return count > 0; }
  bool operator==(const PriorStats&) const = default;
};

struct ClassDims {
  std::int64_t count = 0;
  double w = 1, h = 1, l = 1;  // mean dimensions, meters

  bool operator==(const ClassDims&) const = default;
};

/// Per-class, per-shape statistics of assigned objects.
struct AnchorPriors {
  static constexpr int kSchemaVersion = 1;

  std::vector<std::string> classes;
  std::vector<AnchorShape> shapes;
  std::map<std::string, std::vector<PriorStats>> stats;  // class -> [shape]
  std::map<std::string, ClassDims> dims;

  /// nullptr when the class is unknown or the shape collected no samples.
  const PriorStats* find(int shape_index, const std::string& class_name) const;
  const ClassDims* find_dims(const std::string& class_name) const;
  int class_index(const std::string& class_name) const;

  std::string to_json() const;
  static AnchorPriors from_json(const std::string& text);

  bool operator==(const AnchorPriors&) const = default;
};

/// One training frame's annotations in the anchor grid's pixel frame.
using PriorFrame = std::vector<ObjectAnnotation>;

/// Accumulates z, sin(2 alpha), cos(2 alpha) of the objects assigned to every
/// shape, per class, plus per-class mean dimensions. Frames are processed in
/// parallel and merged in frame order.
AnchorPriors compute_priors(std::span<const PriorFrame> dataset, const AnchorSet& anchors,
                            const AssignOptions& options);

// --- ground plane -------------------------------------------------------------

enum class AnchorStatus : std::uint8_t { kKept, kFarFromGround, kNoPrior };

struct GroundPlaneOptions {
  double ground_y = 1.65;  // camera height above the road, meters
  double tolerance = 1.0;
};

/// Back-projects each anchor center at its prior mean depth and keeps it
/// when |y - ground_y| <= tolerance.
std::vector<AnchorStatus> filter_by_ground_plane(const AnchorSet& anchors, const AnchorPriors& priors,
                                                 const std::string& class_name, const CalibrationPair& calib,
                                                 const GroundPlaneOptions& options);

// --- target encoding ------------------------------------------------------------

enum RegressionIndex : int {
  kRegX2d, kRegY2d, kRegW2d, kRegH2d,
  kRegCx, kRegCy, kRegZ,
  kRegW3d, kRegH3d, kRegL3d,
  kRegSin2a, kRegCos2a,
  kNumRegression
};

enum class DepthEncoding { kPriorNormalized, kInverseSigmoid };

struct EncodingOptions {
  double eps = 1e-3;
  DepthEncoding depth = DepthEncoding::kPriorNormalized;
};

using RegressionVector = std::array<double, kNumRegression>;

struct AnchorTarget {
  RegressionVector reg{};
  bool facing = false;
  int class_index = 0;
};

AnchorTarget encode_targets(const ObjectAnnotation& gt, const Anchor& anchor, const AnchorPriors& priors,
                            const CalibrationPair& calib, const EncodingOptions& options = {});

/// Inverse of encode_targets for one anchor; class and score are left to the caller.
Detection3D decode_anchor(const RegressionVector& reg, bool facing, const Anchor& anchor,
                          const PriorStats& prior, const ClassDims& dims, const CalibrationPair& calib,
                          const EncodingOptions& options = {});

/// z = 1/sigmoid(v) - 1, and its inverse. encode requires z > 0.
double decode_z_alt(double v);
double encode_z_alt(double z);

/// Raw head outputs on one anchor level: cls is [1, A*K, rows, cols] logits,
/// reg is [1, A*(12+1), rows, cols] with the facing logit last per anchor.
struct HeadOutputs {
  Tensor cls;
  Tensor reg;
};

inline constexpr int kRegChannelsPerAnchor = kNumRegression + 1;

struct DecodeOptions {
  double score_threshold = 0.75;
  EncodingOptions encoding;
  /// Per-class anchor masks (indexed like AnchorPriors::classes). Anchors not
  /// kept for their predicted class are dropped. Null disables masking.
  const std::vector<std::vector<AnchorStatus>>* class_masks = nullptr;
};

struct DecodeResult {
  std::vector<Detection3D> detections;  // anchor order
  std::size_t dropped_nonfinite = 0;
  std::size_t masked = 0;
};

/// Scores are sigmoid(max class logit); anchors below the threshold are
/// dropped before decoding.
DecodeResult decode_predictions(const HeadOutputs& outputs, const AnchorSet& anchors, int level,
                                const AnchorPriors& priors, const CalibrationPair& calib,
                                const DecodeOptions& options);

}  // namespace stereodet
