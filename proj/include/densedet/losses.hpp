#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "densedet/autodiff/tensor.hpp"

namespace densedet {

using ad::Tensor;

struct LossWeights {
  // Feature-mimicking weights on teacher-nonzero / teacher-zero elements.
  double beta = 10.0;
  double gamma = 20.0;
  // Per-term multipliers of the student objective.
  double hm = 1.0;
  double reg = 1.0;
  double s2d = 1.0;
  double mask = 1.0;
  double offset = 1.0;
  double hm_distill = 1.0;
  // Teacher heatmap cells above this count as peaks for heatmap distillation.
  double distill_peak = 0.9;
  double focal_alpha = 2.0;
  double focal_beta = 4.0;
};

void validate(const LossWeights& w);

inline constexpr double kLogClamp = 1e-12;

/// Mimicking loss for one student/teacher pair:
///   beta/|N| * sum over teacher != 0 of (s - t)^2
/// + gamma/|N~| * sum over teacher == 0 of (s - t)^2
/// Counts run over the whole tensor; an empty set contributes 0. The teacher
/// never receives gradient.
Tensor feature_mimic(const Tensor& student, const Tensor& teacher, double beta, double gamma);

/// feature_mimic on the fused pair plus feature_mimic on the densified pair.
Tensor l_s2d(const Tensor& fa_student, const Tensor& fa_teacher, const Tensor& fb_student,
             const Tensor& fb_teacher, double beta, double gamma);

/// Class-balanced occupancy BCE, summed over voxels:
///   sum_j [ -(N_b / N_f) y_j log p_j - (1 - y_j) log(1 - p_j) ]
/// `prob` is [N, 1, D, H, W] (or any shape with N leading) and `target` holds
/// one byte per element. Counts are taken per sample; the batch is averaged.
/// A sample without foreground drops its foreground term.
Tensor l_mask(const Tensor& prob, std::span<const std::uint8_t> target);

/// Mean over foreground voxels of || offset + center - gt ||_1.
/// `offset` is [N, 3, D, H, W]; `centers` is [3, D*H*W]; `gt` and `fg` follow
/// the offset layout ([N, 3, V] and [N, V]). No foreground gives 0.
Tensor l_offset(const Tensor& offset, std::span<const double> centers, std::span<const double> gt,
                std::span<const std::uint8_t> fg);

/// Penalty-reduced focal loss on a [N, K, H, W] probability map, normalized by
/// the number of cells with target == 1 (at least 1).
Tensor focal_heatmap(const Tensor& pred, std::span<const double> target, double alpha = 2.0,
                     double beta = 4.0);

/// Mean absolute error over the R regression channels at peak cells.
/// `pred` is [N, R, H, W]; `target` matches; `peaks` is [N, H, W].
Tensor l_reg(const Tensor& pred, std::span<const double> target,
             std::span<const std::uint8_t> peaks);

/// Focal form with the (detached) teacher heatmap as soft target; teacher
/// cells above `peak_threshold` play the role of peaks.
Tensor hm_distill(const Tensor& pred_student, const Tensor& pred_teacher,
                  double peak_threshold = 0.9, double alpha = 2.0, double beta = 4.0);

/// Individual student-objective terms. Undefined tensors are absent terms.
struct LossParts {
  Tensor hm;
  Tensor reg;
  Tensor s2d;
  Tensor mask;
  Tensor offset;
  Tensor hm_distill;
};

/// hm + reg
Tensor total_ddet(const LossParts& parts, const LossWeights& w = {});
/// Weighted sum of every present term.
Tensor total_sdet(const LossParts& parts, const LossWeights& w = {});

}  // namespace densedet
