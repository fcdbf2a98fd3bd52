// SPDX-License-Identifier: Apache-2.0
#include "stereodet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "stereodet/error.hpp"

namespace stereodet {

std::size_t DisparityDistributionTarget::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

DisparityDistributionTarget disparity_target(const Tensor& gt, int depth, double sigma) {
  if (depth < 1) throw InputError("disparity target needs at least one hypothesis");
  if (!(sigma > 0)) throw InputError("disparity target sigma must be positive");
  if (gt.rank() < 2) throw ShapeError("disparity ground truth must be at least 2-D, got " + to_string(gt.shape()));
  for (std::size_t i = 0; i + 2 < gt.rank(); ++i) {
    if (gt.dim(i) != 1) throw ShapeError("disparity ground truth leading dims must be 1, got " + to_string(gt.shape()));
  }
  DisparityDistributionTarget t;
  t.depth = depth;
  t.height = static_cast<int>(gt.dim(gt.rank() - 2));
  t.width = static_cast<int>(gt.dim(gt.rank() - 1));
  t.sigma = sigma;
  const std::size_t hw = static_cast<std::size_t>(t.height) * t.width;
  t.probs.assign(hw * depth, 0.0);
  t.valid.assign(hw, 0);
  std::vector<double> e(static_cast<std::size_t>(depth));
  for (std::size_t p = 0; p < hw; ++p) {
    const double g = gt.data()[p];
    if (!std::isfinite(g) || g < 0) continue;
    t.valid[p] = 1;
    double lo = std::numeric_limits<double>::infinity();
    for (int d = 0; d < depth; ++d) lo = std::min(lo, std::abs(d - g));
    double sum = 0;
    for (int d = 0; d < depth; ++d) {
      e[static_cast<std::size_t>(d)] = std::exp(-(std::abs(d - g) - lo) / sigma);
      sum += e[static_cast<std::size_t>(d)];
    }
    for (int d = 0; d < depth; ++d) t.probs[static_cast<std::size_t>(d) * hw + p] = e[static_cast<std::size_t>(d)] / sum;
  }
  return t;
}

LossResult stereo_focal_loss(std::span<const double> logits, const DisparityDistributionTarget& t,
                             const StereoFocalOptions& opt) {
  const std::size_t hw = static_cast<std::size_t>(t.height) * t.width;
  const std::size_t D = static_cast<std::size_t>(t.depth);
  if (logits.size() != D * hw) {
    throw ShapeError("stereo focal logits hold " + std::to_string(logits.size()) + " values, expected " +
                     std::to_string(D * hw));
  }
  const std::size_t n_valid = t.valid_count();
  if (n_valid == 0) throw InvariantError("stereo focal loss has an empty valid mask");
  const double exponent = opt.sign == FocusSign::kAsPrinted ? -opt.alpha : opt.alpha;

  LossResult r;
  r.grad.assign(logits.size(), 0.0);
  std::vector<double> phat(D), w(D);
  const double inv_n = 1.0 / static_cast<double>(n_valid);
  for (std::size_t p = 0; p < hw; ++p) {
    if (!t.valid[p]) continue;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t d = 0; d < D; ++d) mx = std::max(mx, logits[d * hw + p]);
    double sum = 0;
    for (std::size_t d = 0; d < D; ++d) sum += std::exp(logits[d * hw + p] - mx);
    const double log_sum = std::log(sum);
    double wp_sum = 0, pixel = 0;
    for (std::size_t d = 0; d < D; ++d) {
      const double log_phat = logits[d * hw + p] - mx - log_sum;
      phat[d] = std::exp(log_phat);
      const double P = t.probs[d * hw + p];
      // 1 - P is floored so a one-hot target keeps finite weights.
      w[d] = exponent == 0.0 ? 1.0 : std::pow(std::max(1.0 - P, 1e-12), exponent);
      if (P > 0) pixel -= w[d] * P * log_phat;
      wp_sum += w[d] * P;
    }
    r.loss += pixel;
    for (std::size_t d = 0; d < D; ++d) {
      r.grad[d * hw + p] = (phat[d] * wp_sum - w[d] * t.probs[d * hw + p]) * inv_n;
    }
  }
  r.loss *= inv_n;
  return r;
}

TensorLossResult stereo_focal_loss(const Tensor& logits, const DisparityDistributionTarget& t,
                                   const StereoFocalOptions& opt) {
  const Shape chw{t.depth, t.height, t.width};
  const Shape bchw{1, t.depth, t.height, t.width};
  if (logits.shape() != chw && logits.shape() != bchw) {
    throw ShapeError("stereo focal logits are " + to_string(logits.shape()) + ", expected " + to_string(bchw));
  }
  std::vector<double> z(logits.values().begin(), logits.values().end());
  LossResult r = stereo_focal_loss(z, t, opt);
  std::vector<float> g(r.grad.begin(), r.grad.end());
  return {r.loss, Tensor(logits.shape(), std::move(g))};
}

namespace {

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

ScalarLoss focal_loss(double z, int label, const FocalOptions& opt) {
  if (label != 0 && label != 1) throw InputError("focal loss label must be 0 or 1");
  const double p = 1.0 / (1.0 + std::exp(-z));
  const double log_p = -softplus(-z);
  const double log_q = -softplus(z);  // log(1 - p)
  const double q = 1.0 - p;
  if (label == 1) {
    const double m = std::pow(q, opt.gamma);
    return {-opt.alpha * m * log_p, opt.alpha * m * (opt.gamma * p * log_p - q)};
  }
  const double m = std::pow(p, opt.gamma);
  return {-(1.0 - opt.alpha) * m * log_q, (1.0 - opt.alpha) * m * (p - opt.gamma * q * log_q)};
}

LossResult focal_loss(std::span<const double> logits, std::span<const int> labels, const FocalOptions& opt) {
  if (logits.size() != labels.size()) throw InputError("focal loss logits and labels differ in length");
  LossResult r;
  r.grad.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const ScalarLoss s = focal_loss(logits[i], labels[i], opt);
    r.loss += s.loss;
    r.grad[i] = s.grad;
  }
  return r;
}

LossResult smooth_l1(std::span<const double> pred, std::span<const double> target, double beta) {
  if (pred.size() != target.size()) throw InputError("smooth-L1 inputs differ in length");
  if (!(beta > 0)) throw InputError("smooth-L1 beta must be positive");
  LossResult r;
  r.grad.resize(pred.size());
  if (pred.empty()) return r;
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double x = pred[i] - target[i];
    const double ax = std::abs(x);
    if (ax < beta) {
      r.loss += 0.5 * x * x / beta;
      r.grad[i] = x / beta * inv_n;
    } else {
      r.loss += ax - 0.5 * beta;
      r.grad[i] = (x > 0 ? 1.0 : -1.0) * inv_n;
    }
  }
  r.loss *= inv_n;
  return r;
}

double total_loss(double classification, double regression, double disparity) {
  if (!std::isfinite(classification)) throw InvariantError("classification loss is not finite");
  if (!std::isfinite(regression)) throw InvariantError("regression loss is not finite");
  if (!std::isfinite(disparity)) throw InvariantError("disparity loss is not finite");
  return classification + regression + disparity;
}

}  // namespace stereodet
