#include "densedet/losses.hpp"

#include <cmath>
#include <string>

#include "densedet/autodiff/ops.hpp"
#include "densedet/error.hpp"

namespace densedet {

using ad::Node;

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorCode::kShapeMismatch, what);
}

// Scalar result whose gradient w.r.t. `x` is `g` (computed in the forward pass).
Tensor scalar_with_grad(double value, const Tensor& x, std::vector<double> g) {
  return ad::make_op({1}, {value}, {x}, [x, g = std::move(g)](Node& self) {
    const double up = self.grad[0];
    std::vector<double> scaled(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) scaled[i] = up * g[i];
    ad::accumulate(x, scaled);
  });
}

// log(max(v, eps)) and its derivative.
double clamped_log(double v) { return std::log(std::max(v, kLogClamp)); }
double clamped_log_grad(double v) { return v > kLogClamp ? 1.0 / v : 0.0; }

}  // namespace

void validate(const LossWeights& w) {
  if (!(w.beta > 0.0) || !(w.gamma > 0.0)) {
    fail(ErrorCode::kInvalidConfig, "loss beta and gamma must be positive");
  }
  for (double m : {w.hm, w.reg, w.s2d, w.mask, w.offset, w.hm_distill}) {
    if (!(m >= 0.0) || !std::isfinite(m)) {
      fail(ErrorCode::kInvalidConfig, "loss multipliers must be finite and non-negative");
    }
  }
  if (!(w.distill_peak > 0.0 && w.distill_peak < 1.0)) {
    fail(ErrorCode::kInvalidConfig, "distill_peak must lie in (0, 1)");
  }
}

Tensor feature_mimic(const Tensor& student, const Tensor& teacher, double beta, double gamma) {
  require(student.shape() == teacher.shape(),
          "feature_mimic: " + ad::shape_str(student.shape()) + " vs " +
              ad::shape_str(teacher.shape()));
  const auto s = student.data();
  const auto t = teacher.data();
  std::size_t n_nonzero = 0;
  for (double v : t) n_nonzero += v != 0.0;
  const std::size_t n_zero = t.size() - n_nonzero;
  const double w_nonzero = n_nonzero ? beta / static_cast<double>(n_nonzero) : 0.0;
  const double w_zero = n_zero ? gamma / static_cast<double>(n_zero) : 0.0;
  double nonzero_sum = 0.0, zero_sum = 0.0;
  std::vector<double> g(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double d = s[i] - t[i];
    const double w = t[i] != 0.0 ? w_nonzero : w_zero;
    (t[i] != 0.0 ? nonzero_sum : zero_sum) += d * d;
    g[i] = 2.0 * w * d;
  }
  return scalar_with_grad(w_nonzero * nonzero_sum + w_zero * zero_sum, student, std::move(g));
}

Tensor l_s2d(const Tensor& fa_student, const Tensor& fa_teacher, const Tensor& fb_student,
             const Tensor& fb_teacher, double beta, double gamma) {
  return ad::add(feature_mimic(fa_student, fa_teacher, beta, gamma),
                 feature_mimic(fb_student, fb_teacher, beta, gamma));
}

Tensor l_mask(const Tensor& prob, std::span<const std::uint8_t> target) {
  require(prob.numel() == target.size(), "l_mask: target size mismatch");
  require(prob.rank() >= 1 && prob.dim(0) > 0, "l_mask: empty batch");
  const std::size_t batch = prob.dim(0);
  const std::size_t per = prob.numel() / batch;
  const auto p = prob.data();
  double total = 0.0;
  std::vector<double> g(p.size());
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t nf = 0;
    for (std::size_t j = 0; j < per; ++j) nf += target[b * per + j] != 0;
    const std::size_t nb = per - nf;
    // Foreground weight N_b / N_f is undefined without foreground.
    const double wf = nf ? static_cast<double>(nb) / static_cast<double>(nf) : 0.0;
    for (std::size_t j = 0; j < per; ++j) {
      const std::size_t i = b * per + j;
      if (target[i]) {
        total -= wf * clamped_log(p[i]);
        g[i] = -wf * clamped_log_grad(p[i]);
      } else {
        total -= clamped_log(1.0 - p[i]);
        g[i] = clamped_log_grad(1.0 - p[i]);
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(batch);
  for (auto& v : g) v *= inv;
  return scalar_with_grad(total * inv, prob, std::move(g));
}

Tensor l_offset(const Tensor& offset, std::span<const double> centers, std::span<const double> gt,
                std::span<const std::uint8_t> fg) {
  require(offset.rank() >= 2 && offset.dim(1) == 3, "l_offset: offset must be [N, 3, ...]");
  const std::size_t batch = offset.dim(0);
  const std::size_t vol = offset.numel() / (3 * batch);
  require(centers.size() == 3 * vol, "l_offset: centers size mismatch");
  require(gt.size() == offset.numel(), "l_offset: gt size mismatch");
  require(fg.size() == batch * vol, "l_offset: mask size mismatch");
  std::size_t nf = 0;
  for (auto m : fg) nf += m != 0;
  std::vector<double> g(offset.numel(), 0.0);
  if (nf == 0) return scalar_with_grad(0.0, offset, std::move(g));
  const auto o = offset.data();
  const double inv = 1.0 / static_cast<double>(nf);
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < vol; ++j) {
      if (!fg[b * vol + j]) continue;
      for (std::size_t a = 0; a < 3; ++a) {
        const std::size_t i = (b * 3 + a) * vol + j;
        const double d = o[i] + centers[a * vol + j] - gt[i];
        total += std::abs(d);
        g[i] = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
      }
    }
  }
  return scalar_with_grad(total * inv, offset, std::move(g));
}

namespace {

// Focal form shared by the heatmap loss and its distillation variant.
Tensor focal(const Tensor& pred, std::span<const double> target, double peak_threshold,
             bool peak_is_exact_one, double alpha, double beta) {
  require(pred.numel() == target.size(), "focal: target size mismatch");
  const auto p = pred.data();
  std::size_t peaks = 0;
  for (double t : target) peaks += peak_is_exact_one ? t == 1.0 : t > peak_threshold;
  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(peaks, 1));
  double total = 0.0;
  std::vector<double> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double t = target[i];
    const double pi = p[i];
    const bool peak = peak_is_exact_one ? t == 1.0 : t > peak_threshold;
    if (peak) {
      const double q = std::pow(1.0 - pi, alpha);
      total -= q * clamped_log(pi);
      const double dq = -alpha * std::pow(1.0 - pi, alpha - 1.0);
      g[i] = -(dq * clamped_log(pi) + q * clamped_log_grad(pi));
    } else {
      const double w = std::pow(1.0 - t, beta);
      const double q = std::pow(pi, alpha);
      total -= w * q * clamped_log(1.0 - pi);
      const double dq = alpha * std::pow(pi, alpha - 1.0);
      g[i] = -w * (dq * clamped_log(1.0 - pi) - q * clamped_log_grad(1.0 - pi));
    }
    g[i] *= norm;
  }
  return scalar_with_grad(total * norm, pred, std::move(g));
}

}  // namespace

Tensor focal_heatmap(const Tensor& pred, std::span<const double> target, double alpha,
                     double beta) {
  return focal(pred, target, 0.0, true, alpha, beta);
}

Tensor hm_distill(const Tensor& pred_student, const Tensor& pred_teacher, double peak_threshold,
                  double alpha, double beta) {
  require(pred_student.shape() == pred_teacher.shape(), "hm_distill: shape mismatch");
  return focal(pred_student, pred_teacher.data(), peak_threshold, false, alpha, beta);
}

Tensor l_reg(const Tensor& pred, std::span<const double> target,
             std::span<const std::uint8_t> peaks) {
  require(pred.rank() == 4, "l_reg: pred must be [N, R, H, W]");
  require(target.size() == pred.numel(), "l_reg: target size mismatch");
  const std::size_t n = pred.dim(0), r = pred.dim(1), hw = pred.dim(2) * pred.dim(3);
  require(peaks.size() == n * hw, "l_reg: peak mask size mismatch");
  std::size_t count = 0;
  for (auto m : peaks) count += m != 0;
  std::vector<double> g(pred.numel(), 0.0);
  if (count == 0) return scalar_with_grad(0.0, pred, std::move(g));
  const double inv = 1.0 / static_cast<double>(count * r);
  const auto p = pred.data();
  double total = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t c = 0; c < hw; ++c) {
      if (!peaks[b * hw + c]) continue;
      for (std::size_t k = 0; k < r; ++k) {
        const std::size_t i = (b * r + k) * hw + c;
        const double d = p[i] - target[i];
        total += std::abs(d);
        g[i] = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
      }
    }
  }
  return scalar_with_grad(total * inv, pred, std::move(g));
}

namespace {

void add_term(Tensor& acc, const Tensor& term, double weight) {
  if (!term.defined() || weight == 0.0) return;
  const Tensor scaled = weight == 1.0 ? term : ad::scale(term, weight);
  acc = acc.defined() ? ad::add(acc, scaled) : scaled;
}

}  // namespace

Tensor total_ddet(const LossParts& parts, const LossWeights& w) {
  Tensor acc;
  add_term(acc, parts.hm, w.hm);
  add_term(acc, parts.reg, w.reg);
  return acc.defined() ? acc : Tensor::zeros({1});
}

Tensor total_sdet(const LossParts& parts, const LossWeights& w) {
  Tensor acc;
  add_term(acc, parts.hm, w.hm);
  add_term(acc, parts.reg, w.reg);
  add_term(acc, parts.s2d, w.s2d);
  add_term(acc, parts.mask, w.mask);
  add_term(acc, parts.offset, w.offset);
  add_term(acc, parts.hm_distill, w.hm_distill);
  return acc.defined() ? acc : Tensor::zeros({1});
}

}  // namespace densedet
