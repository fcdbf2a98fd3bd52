// SPDX-License-Identifier: Apache-2.0
#include "stereodet/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "json.hpp"

#include "stereodet/error.hpp"
#include "stereodet/kitti_io.hpp"
#include "stereodet/ops.hpp"

namespace stereodet {

// --- configuration ------------------------------------------------------------

std::vector<AnchorShape> ModelConfig::anchor_shapes() const {
  return make_anchor_shapes(anchor_heights, anchor_ratios, anchor_stride);
}

int ModelConfig::anchors_per_location() const {
  return static_cast<int>(anchor_heights.size() * anchor_ratios.size());
}

std::int64_t ModelConfig::head_input_channels() const {
  return fusion.fused_channels(learned_downsample) + backbone.c16;
}

AssignOptions ModelConfig::assign_options() const {
  AssignOptions o = assignment;
  o.classes = classes;
  return o;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw InputError("invalid model config: " + what); };
  if (input_h <= 0 || input_w <= 0 || input_h % 16 || input_w % 16) fail("input size must be a positive multiple of 16");
  if (crop_top < 0) fail("crop_top must be non-negative");
  const auto& b = backbone;
  if (b.stem_channels <= 0 || b.c4 <= 0 || b.c8 <= 0 || b.c16 <= 0) fail("backbone widths must be positive");
  if (b.blocks4 < 0 || b.blocks8 < 0 || b.blocks16 < 0) fail("backbone block counts must be non-negative");
  const auto& f = fusion;
  if (f.max_disp4 <= 0 || f.max_disp8 <= 0 || f.max_disp16 <= 0 || f.reduce16_channels <= 0) {
    fail("fusion disparities and widths must be positive");
  }
  if (learned_downsample && (f.down4_channels <= 0 || f.down8_channels <= 0)) fail("downsample widths must be positive");
  if (head.hidden_channels <= 0 || decoder.hidden_channels <= 0 || decoder.max_disp <= 0) {
    fail("head and decoder widths must be positive");
  }
  if (classes.empty()) fail("class list is empty");
  if (anchor_heights.empty() || anchor_ratios.empty()) fail("anchor shape lists are empty");
  for (double h : anchor_heights) {
    if (!(h > 0)) fail("anchor heights must be positive");
  }
  for (double r : anchor_ratios) {
    if (!(r > 0)) fail("anchor ratios must be positive");
  }
  if (anchor_stride != 16) fail("heads run on the 1/16 feature, so anchor_stride must be 16");
  if (!(score_threshold >= 0) || !(nms_threshold >= 0 && nms_threshold <= 1)) fail("thresholds out of range");
  if (pre_nms_top_k <= 0) fail("pre_nms_top_k must be positive");
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["input_h"] = input_h;
  j["input_w"] = input_w;
  j["crop_top"] = crop_top;
  j["backbone"] = {{"stem_channels", backbone.stem_channels}, {"c4", backbone.c4},         {"c8", backbone.c8},
                   {"c16", backbone.c16},                     {"blocks4", backbone.blocks4}, {"blocks8", backbone.blocks8},
                   {"blocks16", backbone.blocks16}};
  j["fusion"] = {{"max_disp4", fusion.max_disp4},
                 {"max_disp8", fusion.max_disp8},
                 {"max_disp16", fusion.max_disp16},
                 {"reduce16_channels", fusion.reduce16_channels},
                 {"down4_channels", fusion.down4_channels},
                 {"down8_channels", fusion.down8_channels}};
  j["learned_downsample"] = learned_downsample;
  j["head_hidden_channels"] = head.hidden_channels;
  j["decoder"] = {{"hidden_channels", decoder.hidden_channels}, {"max_disp", decoder.max_disp}};
  j["classes"] = classes;
  j["anchor_heights"] = anchor_heights;
  j["anchor_ratios"] = anchor_ratios;
  j["anchor_stride"] = anchor_stride;
  j["assignment"] = {{"pos_iou", assignment.pos_iou}, {"neg_iou", assignment.neg_iou}};
  j["ground"] = {{"ground_y", ground.ground_y}, {"tolerance", ground.tolerance}};
  j["encoding"] = {{"eps", encoding.eps},
                   {"depth", encoding.depth == DepthEncoding::kPriorNormalized ? "prior" : "inverse_sigmoid"}};
  j["score_threshold"] = score_threshold;
  j["nms_threshold"] = nms_threshold;
  j["pre_nms_top_k"] = pre_nms_top_k;
  j["nms_per_class"] = nms_per_class;
  return j.dump(2) + "\n";
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  ModelConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    if (!j.is_object()) throw InputError("model config must be a JSON object");
    auto opt = [&](const nlohmann::json& node, const char* key, auto& field) {
      if (node.contains(key)) field = node.at(key).get<std::decay_t<decltype(field)>>();
    };
    opt(j, "input_h", c.input_h);
    opt(j, "input_w", c.input_w);
    opt(j, "crop_top", c.crop_top);
    if (j.contains("backbone")) {
      const auto& b = j.at("backbone");
      opt(b, "stem_channels", c.backbone.stem_channels);
      opt(b, "c4", c.backbone.c4);
      opt(b, "c8", c.backbone.c8);
      opt(b, "c16", c.backbone.c16);
      opt(b, "blocks4", c.backbone.blocks4);
      opt(b, "blocks8", c.backbone.blocks8);
      opt(b, "blocks16", c.backbone.blocks16);
    }
    if (j.contains("fusion")) {
      const auto& f = j.at("fusion");
      opt(f, "max_disp4", c.fusion.max_disp4);
      opt(f, "max_disp8", c.fusion.max_disp8);
      opt(f, "max_disp16", c.fusion.max_disp16);
      opt(f, "reduce16_channels", c.fusion.reduce16_channels);
      opt(f, "down4_channels", c.fusion.down4_channels);
      opt(f, "down8_channels", c.fusion.down8_channels);
    }
    opt(j, "learned_downsample", c.learned_downsample);
    opt(j, "head_hidden_channels", c.head.hidden_channels);
    if (j.contains("decoder")) {
      opt(j.at("decoder"), "hidden_channels", c.decoder.hidden_channels);
      opt(j.at("decoder"), "max_disp", c.decoder.max_disp);
    }
    opt(j, "classes", c.classes);
    opt(j, "anchor_heights", c.anchor_heights);
    opt(j, "anchor_ratios", c.anchor_ratios);
    opt(j, "anchor_stride", c.anchor_stride);
    if (j.contains("assignment")) {
      opt(j.at("assignment"), "pos_iou", c.assignment.pos_iou);
      opt(j.at("assignment"), "neg_iou", c.assignment.neg_iou);
    }
    if (j.contains("ground")) {
      opt(j.at("ground"), "ground_y", c.ground.ground_y);
      opt(j.at("ground"), "tolerance", c.ground.tolerance);
    }
    if (j.contains("encoding")) {
      opt(j.at("encoding"), "eps", c.encoding.eps);
      if (j.at("encoding").contains("depth")) {
        const auto d = j.at("encoding").at("depth").get<std::string>();
        if (d == "prior") {
          c.encoding.depth = DepthEncoding::kPriorNormalized;
        } else if (d == "inverse_sigmoid") {
          c.encoding.depth = DepthEncoding::kInverseSigmoid;
        } else {
          throw InputError("unknown depth encoding '" + d + "'");
        }
      }
    }
    opt(j, "score_threshold", c.score_threshold);
    opt(j, "nms_threshold", c.nms_threshold);
    opt(j, "pre_nms_top_k", c.pre_nms_top_k);
    opt(j, "nms_per_class", c.nms_per_class);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

// --- layer inventory ------------------------------------------------------------

namespace {

struct ConvSpec {
  std::string name;
  std::int64_t cout, cin, k;
  int stride, groups;
  bool norm;  // followed by an affine norm named <name minus ".conv">.norm
  double gain = 1.0;  // multiplies the He scale in random_weights
  double bias_init = 0.0;
};

std::string norm_name(const std::string& conv_name) {
  // "<block>.conv" -> "<block>.norm", "<block>.convN" -> "<block>.normN"
  const auto dot = conv_name.rfind('.');
  return conv_name.substr(0, dot) + ".norm" + conv_name.substr(dot + 5);
}

std::vector<ConvSpec> conv_inventory(const ModelConfig& c, bool with_decoder) {
  std::vector<ConvSpec> v;
  const auto& b = c.backbone;
  v.push_back({"backbone.stem.conv", b.stem_channels, 3, 3, 2, 1, true});
  struct Stage {
    const char* name;
    std::int64_t in, out;
    int blocks;
  };
  const Stage stages[] = {{"s4", b.stem_channels, b.c4, b.blocks4}, {"s8", b.c4, b.c8, b.blocks8}, {"s16", b.c8, b.c16, b.blocks16}};
  for (const auto& s : stages) {
    const std::string p = std::string("backbone.") + s.name;
    v.push_back({p + ".down.conv", s.out, s.in, 3, 2, 1, true});
    for (int i = 0; i < s.blocks; ++i) {
      const std::string bp = p + ".block" + std::to_string(i);
      v.push_back({bp + ".conv1", s.out, s.out, 3, 1, 1, true});
      v.push_back({bp + ".conv2", s.out, s.out, 3, 1, 1, true, 0.5});
    }
  }
  const auto& f = c.fusion;
  auto ghost = [&](const std::string& p, std::int64_t ch) {
    v.push_back({p + ".primary.conv", ch, ch, 1, 1, 1, true});
    v.push_back({p + ".cheap.conv", ch, 1, 3, 1, static_cast<int>(ch), true});
  };
  ghost("fusion.ghost4", f.max_disp4);
  const std::int64_t ghost4_out = 3LL * f.max_disp4;
  const std::int64_t cat8 = (c.learned_downsample ? f.down4_channels : ghost4_out) + f.max_disp8;
  if (c.learned_downsample) v.push_back({"fusion.down4", f.down4_channels, ghost4_out, 3, 2, 1, false});
  ghost("fusion.ghost8", cat8);
  if (c.learned_downsample) v.push_back({"fusion.down8", f.down8_channels, 3 * cat8, 3, 2, 1, false});
  v.push_back({"fusion.reduce16", f.reduce16_channels, b.c16, 1, 1, 1, false});

  const std::int64_t A = c.anchors_per_location();
  const std::int64_t K = static_cast<std::int64_t>(c.classes.size());
  const std::int64_t hin = c.head_input_channels(), hid = c.head.hidden_channels;
  v.push_back({"head.cls.conv1", hid, hin, 3, 1, 1, true});
  v.push_back({"head.cls.out", A * K, hid, 3, 1, 1, false, 0.1, 1.0});
  v.push_back({"head.reg.conv1", hid, hin, 3, 1, 1, true});
  v.push_back({"head.reg.out", A * kRegChannelsPerAnchor, hid, 3, 1, 1, false, 0.01});
  if (with_decoder) {
    v.push_back({"decoder.conv1", c.decoder.hidden_channels, c.fusion.fused_channels(c.learned_downsample), 3, 1, 1,
                 false});
    v.push_back({"decoder.out", c.decoder.max_disp, c.decoder.hidden_channels, 1, 1, 1, false, 0.1});
  }
  return v;
}

ConvLayer load_conv(const WeightArchive& w, const std::string& name, int stride, int groups) {
  ConvLayer layer;
  layer.weight = w.get(name + ".weight");
  const auto bias = w.get(name + ".bias").values();
  layer.bias.assign(bias.begin(), bias.end());
  const auto k = layer.weight.rank() == 4 ? layer.weight.dim(2) : 1;
  layer.params = {stride, static_cast<int>(k / 2), groups};
  return layer;
}

AffineNorm load_norm(const WeightArchive& w, const std::string& name) {
  AffineNorm n;
  const auto scale = w.get(name + ".scale").values();
  const auto shift = w.get(name + ".shift").values();
  n.scale.assign(scale.begin(), scale.end());
  n.shift.assign(shift.begin(), shift.end());
  return n;
}

Tensor conv_norm_relu_named(const WeightArchive& w, const std::string& conv, int stride, int groups, const Tensor& x) {
  return conv_norm_relu(load_conv(w, conv, stride, groups), load_norm(w, norm_name(conv)), x);
}

}  // namespace

std::vector<TensorSpec> ModelConfig::required_tensors(bool with_decoder) const {
  std::vector<TensorSpec> out;
  for (const auto& s : conv_inventory(*this, with_decoder)) {
    out.push_back({s.name + ".weight", {s.cout, s.cin, s.k, s.k}});
    out.push_back({s.name + ".bias", {s.cout}});
    if (s.norm) {
      out.push_back({norm_name(s.name) + ".scale", {s.cout}});
      out.push_back({norm_name(s.name) + ".shift", {s.cout}});
    }
  }
  return out;
}

WeightArchive random_weights(const ModelConfig& config, std::uint64_t seed, bool with_decoder) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  WeightArchive w;
  for (const auto& s : conv_inventory(config, with_decoder)) {
    const double fan_in = static_cast<double>(s.cin * s.k * s.k);
    const double std_dev = s.gain * std::sqrt(2.0 / fan_in);
    Tensor weight({s.cout, s.cin, s.k, s.k});
    for (float& x : weight.values()) x = static_cast<float>(normal(rng) * std_dev);
    Tensor bias({s.cout});
    for (float& x : bias.values()) x = static_cast<float>(s.bias_init + 0.01 * normal(rng));
    w.add(s.name + ".weight", std::move(weight));
    w.add(s.name + ".bias", std::move(bias));
    if (s.norm) {
      w.add(norm_name(s.name) + ".scale", Tensor({s.cout}, 1.0f));
      w.add(norm_name(s.name) + ".shift", Tensor({s.cout}, 0.0f));
    }
  }
  return w;
}

AnchorSet model_anchors(const ModelConfig& config) {
  const auto shapes = config.anchor_shapes();
  const int strides[] = {config.anchor_stride};
  return generate_grid(config.input_w, config.input_h, shapes, strides);
}

// --- preprocessing ----------------------------------------------------------

Box2D ImageTransform::forward(const Box2D& b) const {
  return {sx * b.x1, sy * (b.y1 - crop_top), sx * b.x2, sy * (b.y2 - crop_top)};
}

Box2D ImageTransform::inverse(const Box2D& b) const {
  return {b.x1 / sx, b.y1 / sy + crop_top, b.x2 / sx, b.y2 / sy + crop_top};
}

CalibrationPair ImageTransform::forward(const CalibrationPair& calib) const {
  auto map = [&](const Matrix34& P) {
    Matrix34 out = P;
    for (int c = 0; c < 4; ++c) {
      out[c] = sx * P[c];
      out[4 + c] = sy * (P[4 + c] - crop_top * P[8 + c]);
    }
    return out;
  };
  return CalibrationPair::from_matrices(map(calib.P2), map(calib.P3));
}

ImageTransform make_transform(int source_w, int source_h, const ModelConfig& config) {
  if (source_w <= 0 || source_h <= config.crop_top) {
    throw InputError("image " + std::to_string(source_w) + "x" + std::to_string(source_h) +
                     " is not taller than the crop of " + std::to_string(config.crop_top) + " rows");
  }
  ImageTransform t;
  t.crop_top = config.crop_top;
  t.source_w = source_w;
  t.source_h = source_h;
  t.sx = static_cast<double>(config.input_w) / source_w;
  t.sy = static_cast<double>(config.input_h) / (source_h - config.crop_top);
  return t;
}

namespace {

Tensor prepare_image(const Image& img, const ModelConfig& config) {
  Tensor t = image_to_tensor(img);
  if (config.crop_top > 0) t = crop_rows(t, config.crop_top);
  if (t.height() != config.input_h || t.width() != config.input_w) {
    t = resample_bilinear(t, config.input_h, config.input_w);
  }
  return t;
}

}  // namespace

PreprocessResult preprocess(const Image& left, const Image& right, std::span<const ObjectAnnotation> annotations,
                            const CalibrationPair& calib, const ModelConfig& config) {
  if (left.width != right.width || left.height != right.height) {
    throw InputError("stereo pair size mismatch");
  }
  PreprocessResult r;
  r.transform = make_transform(left.width, left.height, config);
  r.left = prepare_image(left, config);
  r.right = prepare_image(right, config);
  r.calib = r.transform.forward(calib);
  r.annotations.assign(annotations.begin(), annotations.end());
  for (auto& a : r.annotations) a.box = r.transform.forward(a.box);
  return r;
}

// --- network ----------------------------------------------------------------

BackboneFeatures backbone_forward(const Tensor& input, const WeightArchive& w, const ModelConfig& config,
                                  ForwardTrace* trace, const std::string& tag) {
  require_rank4(input, "backbone input");
  if (input.channels() != 3) throw ShapeError("backbone input must have 3 channels, got " + to_string(input.shape()));
  const auto& b = config.backbone;
  Tensor x = conv_norm_relu_named(w, "backbone.stem.conv", 2, 1, input);
  auto stage = [&](const char* name, int blocks) {
    const std::string p = std::string("backbone.") + name;
    x = conv_norm_relu_named(w, p + ".down.conv", 2, 1, x);
    for (int i = 0; i < blocks; ++i) {
      const std::string bp = p + ".block" + std::to_string(i);
      Tensor y = conv_norm_relu_named(w, bp + ".conv1", 1, 1, x);
      y = apply(load_norm(w, bp + ".norm2"), apply(load_conv(w, bp + ".conv2", 1, 1), y));
      x = relu(add(x, y));
    }
    return x;
  };
  BackboneFeatures f;
  f.f4 = stage("s4", b.blocks4);
  f.f8 = stage("s8", b.blocks8);
  f.f16 = stage("s16", b.blocks16);
  const std::string p = "backbone." + tag;
  trace_record(trace, p + ".f4", f.f4);
  trace_record(trace, p + ".f8", f.f8);
  trace_record(trace, p + ".f16", f.f16);
  return f;
}

FusionParams bind_fusion_params(const WeightArchive& w, const ModelConfig& config) {
  auto ghost = [&](const std::string& p) {
    GhostParams g;
    g.primary = load_conv(w, p + ".primary.conv", 1, 1);
    g.primary_norm = load_norm(w, p + ".primary.norm");
    g.cheap = load_conv(w, p + ".cheap.conv", 1, 1);
    g.cheap.params.groups = static_cast<int>(g.cheap.out_channels());
    g.cheap_norm = load_norm(w, p + ".cheap.norm");
    return g;
  };
  FusionParams fp;
  fp.ghost4 = ghost("fusion.ghost4");
  fp.ghost8 = ghost("fusion.ghost8");
  if (config.learned_downsample) {
    fp.down4 = load_conv(w, "fusion.down4", 2, 1);
    fp.down8 = load_conv(w, "fusion.down8", 2, 1);
  }
  fp.reduce16 = load_conv(w, "fusion.reduce16", 1, 1);
  return fp;
}

HeadOutputs head_forward(const Tensor& features, const WeightArchive& w, const ModelConfig& config,
                         ForwardTrace* trace) {
  require_rank4(features, "head input");
  if (features.channels() != config.head_input_channels()) {
    throw ShapeError("head input has " + std::to_string(features.channels()) + " channels, expected " +
                     std::to_string(config.head_input_channels()));
  }
  HeadOutputs out;
  out.cls = apply(load_conv(w, "head.cls.out", 1, 1), conv_norm_relu_named(w, "head.cls.conv1", 1, 1, features));
  trace_record(trace, "head.cls", out.cls);
  out.reg = apply(load_conv(w, "head.reg.out", 1, 1), conv_norm_relu_named(w, "head.reg.conv1", 1, 1, features));
  trace_record(trace, "head.reg", out.reg);
  return out;
}

Tensor disparity_decoder_forward(const Tensor& fused, const WeightArchive& w, const ModelConfig& config,
                                 ForwardTrace* trace) {
  require_rank4(fused, "decoder input");
  const auto expected = config.fusion.fused_channels(config.learned_downsample);
  if (fused.channels() != expected) {
    throw ShapeError("decoder input has " + std::to_string(fused.channels()) + " channels, expected " +
                     std::to_string(expected));
  }
  Tensor x = relu(apply(load_conv(w, "decoder.conv1", 1, 1), fused));
  trace_record(trace, "decoder.conv1", x);
  x = resample_bilinear(x, config.input_h / 4, config.input_w / 4);
  trace_record(trace, "decoder.upsample", x);
  x = apply(load_conv(w, "decoder.out", 1, 1), x);
  trace_record(trace, "decoder.out", x);
  return x;
}

namespace {

void require_finite(const Tensor& t, const char* name) {
  if (!all_finite(t)) throw InvariantError(std::string("tensor '") + name + "' contains non-finite values");
}

std::vector<Detection3D> suppress(std::vector<Detection3D> dets, const ModelConfig& config, double nms_threshold) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection3D& a, const Detection3D& b) { return a.score > b.score; });
  if (dets.size() > static_cast<std::size_t>(config.pre_nms_top_k)) {
    dets.resize(static_cast<std::size_t>(config.pre_nms_top_k));
  }
  if (!config.nms_per_class) return nms(dets, nms_threshold);
  std::map<std::string, std::vector<Detection3D>> groups;
  for (auto& d : dets) groups[d.class_name].push_back(std::move(d));
  std::vector<Detection3D> kept;
  for (auto& [cls, g] : groups) {
    auto k = nms(g, nms_threshold);
    kept.insert(kept.end(), std::make_move_iterator(k.begin()), std::make_move_iterator(k.end()));
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const Detection3D& a, const Detection3D& b) { return a.score > b.score; });
  return kept;
}

}  // namespace

DetectResult detect(const Image& left, const Image& right, const CalibrationPair& calib,
                    const WeightArchive& weights, const AnchorPriors& priors, const ModelConfig& config,
                    const DetectOptions& options) {
  config.validate();
  const auto required = config.required_tensors(options.emit_disparity);
  validate_archive(weights, required);
  if (priors.classes != config.classes) throw InputError("priors classes do not match the model classes");
  if (priors.shapes != config.anchor_shapes()) throw InputError("priors anchor shapes do not match the model");

  DetectResult res;
  ForwardTrace* trace = &res.trace;
  const PreprocessResult pre = preprocess(left, right, {}, calib, config);
  trace_record(trace, "preprocess.left", pre.left);
  trace_record(trace, "preprocess.right", pre.right);

  const BackboneFeatures fl = backbone_forward(pre.left, weights, config, trace, "left");
  const BackboneFeatures fr = backbone_forward(pre.right, weights, config, trace, "right");
  const FusionParams fp = bind_fusion_params(weights, config);
  const Tensor fused = hierarchical_fusion_forward({fl.f4, fr.f4}, {fl.f8, fr.f8}, {fl.f16, fr.f16}, fp,
                                                   config.fusion, trace);
  const Tensor head_in = concat_channels({fused, fl.f16});
  trace_record(trace, "head.input", head_in);
  const HeadOutputs heads = head_forward(head_in, weights, config, trace);
  require_finite(heads.cls, "head.cls");
  require_finite(heads.reg, "head.reg");

  const AnchorSet anchors = model_anchors(config);
  std::vector<std::vector<AnchorStatus>> masks;
  for (const auto& cls : config.classes) {
    masks.push_back(filter_by_ground_plane(anchors, priors, cls, pre.calib, config.ground));
  }
  DecodeOptions dopt;
  dopt.score_threshold = options.score_threshold;
  dopt.encoding = config.encoding;
  dopt.class_masks = &masks;
  DecodeResult decoded = decode_predictions(heads, anchors, 0, priors, pre.calib, dopt);
  res.dropped_nonfinite = decoded.dropped_nonfinite;
  res.masked = decoded.masked;

  for (auto& d : decoded.detections) d.box = pre.transform.inverse(d.box);
  res.detections = suppress(std::move(decoded.detections), config, options.nms_threshold);

  if (options.emit_disparity) res.disparity_logits = disparity_decoder_forward(fused, weights, config, trace);
  return res;
}

}  // namespace stereodet
