#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "densedet/autodiff/tensor.hpp"

namespace densedet::ad {

// Layouts: 2D feature maps are [N, C, H, W]; 3D grids are [N, C, D, H, W].

struct ConvOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

/// Cross-correlation. weight [O, C/groups, k, k], bias [O] (may be undefined).
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              const ConvOptions& opt = {});
/// weight [O, C/groups, k, k, k].
Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              const ConvOptions& opt = {});
/// One k x k filter per channel: weight [C, 1, k, k].
Tensor depthwise_conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                        std::size_t padding);
/// Adjoint of conv2d. weight [C, O/groups, k, k].
/// Output size (H - 1) * stride - 2 * padding + k.
Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                        const ConvOptions& opt = {});
/// weight [C, O/groups, k, k, k].
Tensor conv_transpose3d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                        const ConvOptions& opt = {});

inline constexpr double kNormEps = 1e-5;

/// Per-channel normalization over batch and space. In training mode the
/// batch statistics are used and the running buffers move by `momentum`;
/// in eval mode the running buffers are used and left untouched.
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  std::vector<double>& running_mean, std::vector<double>& running_var,
                  bool training, double momentum = 0.1, double eps = kNormEps);

/// Normalizes over the channel axis at every (batch, position).
Tensor layer_norm_channels(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                           double eps = kNormEps);

/// x * Phi(x), erf form.
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
/// Multiplies every channel of [N, C, ...] by a [N, 1, ...] (or [1, 1, ...])
/// spatial mask.
Tensor mul_spatial(const Tensor& x, const Tensor& mask);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor reshape(const Tensor& x, Shape shape);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Sum of squared entries.
Tensor sum_squares(const Tensor& x);

/// Max pooling on a constant grid, used to propagate occupancy masks.
/// Operates on [N, 1, D, H, W] with cubic kernel/stride/padding.
Tensor max_pool3d(const Tensor& x, std::size_t kernel, std::size_t stride, std::size_t padding);

}  // namespace densedet::ad
