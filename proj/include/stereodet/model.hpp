// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stereodet/anchors.hpp"
#include "stereodet/geometry.hpp"
#include "stereodet/image.hpp"
#include "stereodet/stereo_matching.hpp"
#include "stereodet/trace.hpp"
#include "stereodet/weights.hpp"

namespace stereodet {

/// Residual stack with output strides 4, 8 and 16. Each stage starts with a
/// stride-2 3x3 convolution followed by `blocks*` basic residual blocks.
struct BackbonePlan {
  int stem_channels = 32;
  int c4 = 64;
  int c8 = 128;
  int c16 = 256;
  int blocks4 = 1;
  int blocks8 = 1;
  int blocks16 = 1;
};

struct HeadConfig {
  int hidden_channels = 64;  // two 3x3 conv blocks per branch
};

struct DecoderConfig {
  int hidden_channels = 64;
  int max_disp = 96;  // hypotheses at 1/4 scale
};

struct ModelConfig {
  int input_h = 288;
  int input_w = 1280;
  int crop_top = 100;
  BackbonePlan backbone;
  FusionConfig fusion;
  bool learned_downsample = true;
  HeadConfig head;
  DecoderConfig decoder;
  std::vector<std::string> classes = {"Car"};

  std::vector<double> anchor_heights = {24, 40, 64, 104, 168};
  std::vector<double> anchor_ratios = {0.5, 1.0, 2.0};  // width / height
  int anchor_stride = 16;
  AssignOptions assignment;  // classes filled from `classes`
  GroundPlaneOptions ground;
  EncodingOptions encoding;

  double score_threshold = 0.75;
  double nms_threshold = 0.4;
  int pre_nms_top_k = 1000;
  bool nms_per_class = true;

  std::vector<AnchorShape> anchor_shapes() const;
  int anchors_per_location() const;
  std::int64_t head_input_channels() const;
  AssignOptions assign_options() const;

  /// Throws InputError on inconsistent settings.
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);

  /// Every tensor the forward pass reads, with its shape.
  std::vector<TensorSpec> required_tensors(bool with_decoder) const;
};

// --- preprocessing ----------------------------------------------------------

/// Crop of the top rows followed by a resize. Maps source pixels to network
/// pixels: u' = sx * u, v' = sy * (v - crop_top).
struct ImageTransform {
  int crop_top = 0;
  double sx = 1, sy = 1;
  int source_w = 0, source_h = 0;

  Box2D forward(const Box2D& box) const;
  Box2D inverse(const Box2D& box) const;
  CalibrationPair forward(const CalibrationPair& calib) const;
  bool is_identity() const { return crop_top == 0 && sx == 1.0 && sy == 1.0; }
};

/// Throws InputError if the image is not taller than the crop.
ImageTransform make_transform(int source_w, int source_h, const ModelConfig& config);

struct PreprocessResult {
  Tensor left;   // [1, 3, input_h, input_w], normalized
  Tensor right;
  CalibrationPair calib;
  std::vector<ObjectAnnotation> annotations;
  ImageTransform transform;
};

PreprocessResult preprocess(const Image& left, const Image& right, std::span<const ObjectAnnotation> annotations,
                            const CalibrationPair& calib, const ModelConfig& config);

// --- network ----------------------------------------------------------------

struct BackboneFeatures {
  Tensor f4, f8, f16;
};

/// Siamese: call once per image with the same archive.
BackboneFeatures backbone_forward(const Tensor& input, const WeightArchive& weights, const ModelConfig& config,
                                  ForwardTrace* trace = nullptr, const std::string& tag = "left");

FusionParams bind_fusion_params(const WeightArchive& weights, const ModelConfig& config);

HeadOutputs head_forward(const Tensor& features, const WeightArchive& weights, const ModelConfig& config,
                         ForwardTrace* trace = nullptr);

/// Disparity logits [1, D, H/4, W/4] from the fused 1/16 stereo feature.
Tensor disparity_decoder_forward(const Tensor& fused, const WeightArchive& weights, const ModelConfig& config,
                                 ForwardTrace* trace = nullptr);

struct DetectOptions {
  double score_threshold = 0.75;
  double nms_threshold = 0.4;
  bool emit_disparity = false;
};

struct DetectResult {
  std::vector<Detection3D> detections;  // source-image pixels
  ForwardTrace trace;
  std::optional<Tensor> disparity_logits;
  std::size_t dropped_nonfinite = 0;
  std::size_t masked = 0;
};

/// preprocess -> backbone (both images) -> fusion -> heads on [fused, left f16]
/// -> per-class anchor masking -> decode -> NMS -> back to source pixels.
/// Throws InvariantError naming the tensor if a head output is not finite.
DetectResult detect(const Image& left, const Image& right, const CalibrationPair& calib,
                    const WeightArchive& weights, const AnchorPriors& priors, const ModelConfig& config,
                    const DetectOptions& options);

/// He-scaled random convolutions, unit norms, small biases.
WeightArchive random_weights(const ModelConfig& config, std::uint64_t seed, bool with_decoder = true);

/// Anchor grid of the network input for this configuration.
AnchorSet model_anchors(const ModelConfig& config);

}  // namespace stereodet
