// SPDX-License-Identifier: Apache-2.0
#include "stereodet/kitti_io.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "stereodet/error.hpp"

namespace stereodet {

CalibrationPair CalibrationPair::from_matrices(const Matrix34& p2, const Matrix34& p3) {
  CalibrationPair c;
  c.P2 = p2;
  c.P3 = p3;
  c.fx = p2[0];
  c.fy = p2[5];
  c.cx = p2[2];
  c.cy = p2[6];
  if (!(c.fx > 0) || !(c.fy > 0)) throw InputError("calibration focal lengths must be positive");
  c.baseline = (p2[3] - p3[3]) / c.fx;
  if (!(c.baseline > 0)) {
    throw InputError("calibration baseline must be positive, got " + std::to_string(c.baseline));
  }
  return c;
}

Detection3D to_detection(const ObjectAnnotation& a, double default_score) {
  Detection3D d;
  d.class_name = a.class_name;
  d.score = a.score.value_or(default_score);
  d.alpha = a.alpha;
  d.box = a.box;
  d.h = a.h;
  d.w = a.w;
  d.l = a.l;
  d.location = a.location;
  d.rotation_y = a.rotation_y;
  return d;
}

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

double to_double(std::string_view s, int line, const char* field) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParseError(std::string("invalid number '") + std::string(s) + "' for " + field, line);
  }
  return v;
}

template <typename F>
void for_each_line(std::string_view text, F&& f) {
  int line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    f(line, line_no);
    if (end == text.size()) break;
    start = end + 1;
  }
}

}  // namespace

CalibrationPair parse_calibration(std::string_view text) {
  std::optional<Matrix34> p2, p3;
  for_each_line(text, [&](std::string_view line, int line_no) {
    const auto colon = line.find(':');
    if (colon == std::string_view::npos) return;
    const auto key = line.substr(0, colon);
    if (key != "P2" && key != "P3") return;
    const auto fields = split_ws(line.substr(colon + 1));
    if (fields.size() != 12) {
      throw ParseError(std::string(key) + " needs 12 values, got " + std::to_string(fields.size()), line_no);
    }
    Matrix34 m{};
    for (std::size_t i = 0; i < 12; ++i) m[i] = to_double(fields[i], line_no, "projection entry");
    (key == "P2" ? p2 : p3) = m;
  });
  if (!p2) throw ParseError("calibration is missing P2", 0);
  if (!p3) throw ParseError("calibration is missing P3", 0);
  return CalibrationPair::from_matrices(*p2, *p3);
}

std::string write_calibration(const CalibrationPair& calib) {
  std::ostringstream os;
  os.precision(12);
  auto row = [&](const char* key, const Matrix34& m) {
    os << key << ':';
    for (double v : m) os << ' ' << v;
    os << '\n';
  };
  row("P2", calib.P2);
  row("P3", calib.P3);
  return os.str();
}

std::vector<ObjectAnnotation> parse_labels(std::string_view text) {
  std::vector<ObjectAnnotation> out;
  for_each_line(text, [&](std::string_view line, int line_no) {
    const auto f = split_ws(line);
    if (f.empty()) return;
    if (f.size() < 15) {
      throw ParseError("label row needs at least 15 fields, got " + std::to_string(f.size()), line_no);
    }
    ObjectAnnotation a;
    a.class_name = std::string(f[0]);
    a.truncation = to_double(f[1], line_no, "truncation");
    a.occlusion = static_cast<int>(to_double(f[2], line_no, "occlusion"));
    a.alpha = to_double(f[3], line_no, "alpha");
    a.box = {to_double(f[4], line_no, "x1"), to_double(f[5], line_no, "y1"), to_double(f[6], line_no, "x2"),
             to_double(f[7], line_no, "y2")};
    a.h = to_double(f[8], line_no, "height");
    a.w = to_double(f[9], line_no, "width");
    a.l = to_double(f[10], line_no, "length");
    a.location = {to_double(f[11], line_no, "x"), to_double(f[12], line_no, "y"), to_double(f[13], line_no, "z")};
    a.rotation_y = to_double(f[14], line_no, "rotation_y");
    if (f.size() >= 16) a.score = to_double(f[15], line_no, "score");
    if (a.box.x2 < a.box.x1 || a.box.y2 < a.box.y1) throw ParseError("2D box corners are reversed", line_no);
    out.push_back(std::move(a));
  });
  return out;
}

namespace {

void append_row(std::string& out, const std::string& cls, double trunc, int occ, double alpha, const Box2D& b,
                double h, double w, double l, const Vec3& loc, double ry, const double* score) {
  char buf[512];
  int n = std::snprintf(buf, sizeof(buf), "%s %.2f %d %.2f %.2f %.2f %.2f %.2f %.2f %.2f %.2f %.2f %.2f %.2f %.2f",
                        cls.c_str(), trunc, occ, alpha, b.x1, b.y1, b.x2, b.y2, h, w, l, loc.x, loc.y, loc.z, ry);
  out.append(buf, static_cast<std::size_t>(n));
  if (score) {
    n = std::snprintf(buf, sizeof(buf), " %.6f", *score);
    out.append(buf, static_cast<std::size_t>(n));
  }
  out.push_back('\n');
}

}  // namespace

std::string write_labels(const std::vector<ObjectAnnotation>& annotations) {
  std::string out;
  for (const auto& a : annotations) {
    const double s = a.score.value_or(0.0);
    append_row(out, a.class_name, a.truncation, a.occlusion, a.alpha, a.box, a.h, a.w, a.l, a.location, a.rotation_y,
               a.score ? &s : nullptr);
  }
  return out;
}

std::string write_detections(const std::vector<Detection3D>& detections) {
  std::string out;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    const auto& d = detections[i];
    const double fields[] = {d.score, d.alpha, d.box.x1, d.box.y1, d.box.x2, d.box.y2, d.h, d.w, d.l,
                             d.location.x, d.location.y, d.location.z, d.rotation_y};
    for (double v : fields) {
      if (!std::isfinite(v)) throw InputError("detection " + std::to_string(i) + " has a non-finite field");
    }
    append_row(out, d.class_name, -1.0, -1, d.alpha, d.box, d.h, d.w, d.l, d.location, d.rotation_y, &d.score);
  }
  return out;
}

Tensor image_to_tensor(const Image& image) {
  if (image.width <= 0 || image.height <= 0) throw InputError("empty image");
  const std::int64_t H = image.height, W = image.width;
  Tensor t({1, 3, H, W});
  for (int c = 0; c < 3; ++c) {
    float* plane = t.data() + c * H * W;
    for (std::int64_t i = 0; i < H * W; ++i) {
      const float v = static_cast<float>(image.rgb[static_cast<std::size_t>(3 * i + c)]) / 255.0f;
      plane[i] = (v - kImageMean[c]) / kImageStd[c];
    }
  }
  return t;
}

std::pair<Tensor, Tensor> load_image_pair(const Image& left, const Image& right) {
  if (left.width != right.width || left.height != right.height) {
    throw InputError("stereo pair size mismatch: left " + std::to_string(left.width) + "x" +
                     std::to_string(left.height) + ", right " + std::to_string(right.width) + "x" +
                     std::to_string(right.height));
  }
  return {image_to_tensor(left), image_to_tensor(right)};
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

}  // namespace stereodet
