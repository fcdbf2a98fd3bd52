// SPDX-License-Identifier: Apache-2.0
// Command-line front end. Exit codes: 0 success, 2 bad input, 3 invariant violation.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "stereodet/anchors.hpp"
#include "stereodet/disparity_gt.hpp"
#include "stereodet/error.hpp"
#include "stereodet/evaluation.hpp"
#include "stereodet/kitti_io.hpp"
#include "stereodet/model.hpp"
#include "stereodet/ops.hpp"
#include "stereodet/parallel.hpp"
#include "stereodet/selftest.hpp"
#include "stereodet/stereo_matching.hpp"
#include "stereodet/synthetic.hpp"

namespace fs = std::filesystem;
using namespace stereodet;

namespace {

std::vector<std::string> frame_ids(const fs::path& root, const std::string& split, const char* subdir) {
  std::vector<std::string> ids;
  if (!split.empty()) {
    std::istringstream in(read_text_file(split));
    for (std::string line; std::getline(in, line);) {
      line.erase(std::remove_if(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); }),
                 line.end());
      if (!line.empty()) ids.push_back(line);
    }
  } else {
    const fs::path dir = root / subdir;
    if (!fs::is_directory(dir)) throw InputError("missing directory " + dir.string());
    for (const auto& e : fs::directory_iterator(dir)) ids.push_back(e.path().stem().string());
    std::sort(ids.begin(), ids.end());
  }
  if (ids.empty()) throw InputError("no frames found under " + root.string());
  return ids;
}

ModelConfig load_config(const std::string& path) {
  if (path.empty()) return ModelConfig{};
  return ModelConfig::from_json(read_text_file(path));
}

Shape parse_shape(const std::string& text) {
  Shape s;
  std::stringstream ss(text);
  for (std::string part; std::getline(ss, part, 'x');) {
    try {
      std::size_t used = 0;
      s.push_back(std::stoll(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::logic_error&) {
      throw InputError("bad shape '" + text + "', expected e.g. 1x64x72x320");
    }
  }
  if (s.size() != 4) throw InputError("shape must have four extents, got '" + text + "'");
  return s;
}

int cmd_synth(const std::string& out, int frames, std::uint64_t seed) {
  write_synthetic_dataset(out, frames, seed);
  std::cout << "wrote " << frames << " synthetic frames to " << out << "\n";
  return 0;
}

int cmd_init_weights(const std::string& out, std::uint64_t seed, bool with_decoder, const std::string& config) {
  const ModelConfig cfg = load_config(config);
  const WeightArchive w = random_weights(cfg, seed, with_decoder);
  save_weights(w, out);
  std::cout << "wrote " << w.size() << " tensors to " << out << "\n";
  return 0;
}

int cmd_priors(const fs::path& data, const std::string& split, const std::string& out, const std::string& config) {
  const ModelConfig cfg = load_config(config);
  std::vector<PriorFrame> frames;
  for (const auto& id : frame_ids(data, split, "label_2")) {
    const Image img = read_image(data / "image_2" / (id + ".png"));
    const ImageTransform t = make_transform(img.width, img.height, cfg);
    PriorFrame f = parse_labels(read_text_file(data / "label_2" / (id + ".txt")));
    for (auto& a : f) a.box = t.forward(a.box);
    frames.push_back(std::move(f));
  }
  const AnchorPriors p = compute_priors(frames, model_anchors(cfg), cfg.assign_options());
  write_text_file(out, p.to_json());
  std::size_t usable = 0;
  for (const auto& [cls, v] : p.stats) usable += std::count_if(v.begin(), v.end(), [](auto& s) { return s.usable(); });
  std::cout << "priors from " << frames.size() << " frames: " << usable << " usable (class, shape) entries -> " << out
            << "\n";
  return 0;
}

int cmd_infer(const fs::path& data, const std::string& split, const std::string& weights_path,
              const std::string& priors_path, double score, double nms_thr, bool emit_disparity, const fs::path& out,
              const std::string& config) {
  const ModelConfig cfg = load_config(config);
  const WeightArchive w = load_weights(weights_path);
  validate_archive(w, cfg.required_tensors(emit_disparity));
  const AnchorPriors priors = AnchorPriors::from_json(read_text_file(priors_path));
  fs::create_directories(out);
  DetectOptions opt{score, nms_thr, emit_disparity};
  for (const auto& id : frame_ids(data, split, "image_2")) {
    const Image left = read_image(data / "image_2" / (id + ".png"));
    const Image right = read_image(data / "image_3" / (id + ".png"));
    const CalibrationPair calib = parse_calibration(read_text_file(data / "calib" / (id + ".txt")));
    const DetectResult r = detect(left, right, calib, w, priors, cfg, opt);
    write_text_file(out / (id + ".txt"), write_detections(r.detections));
    if (r.disparity_logits) {
      // Expected disparity at 1/4 scale from the softmax over hypotheses.
      const Tensor p = softmax_axis(*r.disparity_logits, 1);
      const auto D = p.channels(), H = p.height(), W = p.width();
      SparseDisparityMap m{static_cast<int>(W), static_cast<int>(H), 0, static_cast<int>(D),
                           std::vector<float>(static_cast<std::size_t>(H * W), 0.0f)};
      for (std::int64_t d = 0; d < D; ++d) {
        for (std::int64_t i = 0; i < H * W; ++i) m.values[static_cast<std::size_t>(i)] += d * p.data()[d * H * W + i];
      }
      write_disparity_png(m, out / (id + "_disparity.png"));
    }
    std::cout << id << ": " << r.detections.size() << " detections\n";
  }
  return 0;
}

int cmd_gen_disparity(const fs::path& data, const std::string& split, const fs::path& out, BlockMatchParams params,
                      int downscale) {
  fs::create_directories(out);
  for (const auto& id : frame_ids(data, split, "image_2")) {
    const GrayImage l = to_luminance(read_image(data / "image_2" / (id + ".png")));
    const GrayImage r = to_luminance(read_image(data / "image_3" / (id + ".png")));
    SparseDisparityMap m = block_match(l, r, params);
    if (downscale > 1) m = downscale_disparity(m, downscale);
    write_disparity_png(m, out / (id + ".png"));
    std::printf("%s: %zu of %zu pixels valid\n", id.c_str(), m.valid_count(), m.values.size());
  }
  return 0;
}

int cmd_bench(const std::string& shape, int max_disp, int reps, int threads, bool json) {
  const CostVolumeBenchReport r = bench_cost_volumes(parse_shape(shape), max_disp, reps, threads);
  std::cout << (json ? r.to_json() : r.to_text());
  return 0;
}

int cmd_evaluate(const fs::path& gt_dir, const fs::path& det_dir, double iou, const std::string& kind, int points,
                 const std::string& cls) {
  if (!fs::is_directory(gt_dir)) throw InputError("missing ground-truth directory " + gt_dir.string());
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(gt_dir)) {
    if (e.path().extension() == ".txt") ids.push_back(e.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw InputError("no label files in " + gt_dir.string());
  std::vector<std::vector<ObjectAnnotation>> gts;
  std::vector<std::vector<Detection3D>> dets;
  for (const auto& id : ids) {
    gts.push_back(parse_labels(read_text_file(gt_dir / (id + ".txt"))));
    dets.emplace_back();
    const fs::path dp = det_dir / (id + ".txt");
    if (fs::exists(dp)) {
      for (const auto& a : parse_labels(read_text_file(dp))) dets.back().push_back(to_detection(a, 0.0));
    }
  }
  std::vector<MetricRow> rows;
  ApOptions opt;
  opt.kind = parse_iou_kind(kind);
  opt.iou_threshold = iou;
  opt.recall_points = points;
  opt.class_name = cls;
  for (const auto& b : kitti_buckets()) {
    opt.bucket = b;
    rows.push_back({cls, b.name, opt.kind, iou, points, average_precision(gts, dets, opt)});
  }
  std::cout << format_report(rows);
  return 0;
}

int cmd_selftest() {
  bool ok = true;
  for (const auto& c : run_selftest()) {
    std::printf("%s  %s (%s)\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str());
    ok = ok && c.passed;
  }
  if (!ok) throw InvariantError("selftest failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stereo 3D detection engine: priors, inference, disparity supervision, benchmarks, evaluation"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "OpenMP threads (default: runtime default)")->check(CLI::NonNegativeNumber);

  std::string data, split, out, weights, priors, config, gt, det, kind = "3d", shape = "1x64x72x320", cls = "Car";
  double score = 0.75, nms_thr = 0.4, iou = 0.7;
  int points = 40, max_disp = 96, reps = 20, frames = 4, downscale = 1;
  std::uint64_t seed = 0;
  bool emit = false, json = false, with_decoder = false;
  BlockMatchParams bm;

  auto* synth = app.add_subcommand("synth", "write a synthetic KITTI-layout dataset");
  synth->add_option("--out", out, "dataset root")->required();
  synth->add_option("--frames", frames, "frame count")->check(CLI::PositiveNumber);
  synth->add_option("--seed", seed, "random seed");

  auto* initw = app.add_subcommand("init-weights", "write a seeded random weight archive");
  initw->add_option("--out", out, "archive path")->required();
  initw->add_option("--seed", seed, "random seed");
  initw->add_flag("--with-decoder", with_decoder, "include disparity decoder tensors");
  initw->add_option("--config", config, "model config JSON");

  auto* pri = app.add_subcommand("priors", "compute per-anchor depth and orientation priors");
  pri->add_option("--data", data, "KITTI root")->required();
  pri->add_option("--split", split, "file of frame ids");
  pri->add_option("--out", out, "priors JSON path")->required();
  pri->add_option("--config", config, "model config JSON");

  auto* inf = app.add_subcommand("infer", "run detection on every frame");
  inf->add_option("--data", data, "KITTI root")->required();
  inf->add_option("--split", split, "file of frame ids");
  inf->add_option("--weights", weights, "weight archive")->required();
  inf->add_option("--priors", priors, "priors JSON")->required();
  inf->add_option("--score", score, "score threshold");
  inf->add_option("--nms", nms_thr, "NMS IoU threshold")->check(CLI::Range(0.0, 1.0));
  inf->add_flag("--emit-disparity", emit, "also run the disparity decoder");
  inf->add_option("--out", out, "output directory")->required();
  inf->add_option("--config", config, "model config JSON");

  auto* gen = app.add_subcommand("gen-disparity", "block-matching disparity maps as 16-bit PNG");
  gen->add_option("--data", data, "KITTI root")->required();
  gen->add_option("--split", split, "file of frame ids");
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--window", bm.window, "odd SAD window");
  gen->add_option("--search-range", bm.search_range, "largest disparity");
  gen->add_option("--uniqueness", bm.uniqueness_ratio, "uniqueness ratio");
  gen->add_option("--lr-tolerance", bm.lr_tolerance, "left-right tolerance");
  gen->add_option("--downscale", downscale, "1, 2, 4, 8 or 16");

  auto* bench = app.add_subcommand("bench", "time correlation vs concatenation cost volumes");
  bench->add_option("--shape", shape, "feature shape BxCxHxW");
  bench->add_option("--max-disp", max_disp, "disparity hypotheses")->check(CLI::PositiveNumber);
  bench->add_option("--reps", reps, "repetitions (>= 3)");
  bench->add_flag("--json", json, "JSON output");

  auto* ev = app.add_subcommand("evaluate", "KITTI-style average precision");
  ev->add_option("--gt", gt, "ground-truth label directory")->required();
  ev->add_option("--det", det, "detection directory")->required();
  ev->add_option("--iou", iou, "IoU threshold")->check(CLI::Range(0.0, 1.0));
  ev->add_option("--kind", kind, "2d, bev or 3d");
  ev->add_option("--points", points, "11 or 40 recall points");
  ev->add_option("--class", cls, "class name");

  auto* st = app.add_subcommand("selftest", "run the built-in oracle checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (threads > 0) set_num_threads(threads);
    if (*synth) return cmd_synth(out, frames, seed);
    if (*initw) return cmd_init_weights(out, seed, with_decoder, config);
    if (*pri) return cmd_priors(data, split, out, config);
    if (*inf) return cmd_infer(data, split, weights, priors, score, nms_thr, emit, out, config);
    if (*gen) {
      if (downscale != 1 && downscale != 2 && downscale != 4 && downscale != 8 && downscale != 16) {
        throw InputError("--downscale must be 1, 2, 4, 8 or 16");
      }
      return cmd_gen_disparity(data, split, out, bm, downscale);
    }
    if (*bench) return cmd_bench(shape, max_disp, reps, threads > 0 ? threads : 1, json);
    if (*ev) return cmd_evaluate(gt, det, iou, kind, points, cls);
    if (*st) return cmd_selftest();
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const InvariantError& e) {
    std::cerr << "invariant violated: " << e.what() << "\n";
    return 3;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
