#pragma once

#include <span>
#include <string>
#include <vector>

#include "densedet/s2d.hpp"

namespace densedet {

/// Prediction at one reconstruction scale.
struct PCRScale {
  Tensor mask;    // [N, 1, D, H, W], sigmoid
  Tensor offset;  // [N, 3, D, H, W], meters
};

struct PCROutputs {
  /// Coarse (same grid as the backbone output) then twice as fine.
  std::vector<PCRScale> scales;
};

/// Training-only head that lifts F_b back to 3D and predicts voxel occupancy
/// and mean-point offsets at two scales.
///
/// lift: reshape [N, C, H, W] -> [N, C/D, D, H, W], 1x1x1 conv to `width`.
/// stage 1: stride-2 conv3d, conv3d, x2 transposed conv3d -> D x H x W.
/// stage 2: conv3d, conv3d, x2 transposed conv3d -> 2D x 2H x 2W.
/// Each stage ends in a 1x1x1 mask conv (+ sigmoid) and a 1x1x1 offset conv.
class PCRModule {
 public:
  PCRModule() = default;
  PCRModule(ad::ParamStore& store, ad::Initializer& init, const std::string& name,
            std::size_t channels, std::size_t depth, std::size_t width);

  PCROutputs operator()(Tape& tape, const Tensor& f_b, bool training) const;

  std::size_t depth() const { return depth_; }

 private:
  std::size_t channels_ = 0;
  std::size_t depth_ = 1;
  ConvBnAct lift_;
  ConvBnAct s1_conv1_, s1_conv2_, s1_up_;
  ConvBnAct s2_conv1_, s2_conv2_, s2_up_;
  ad::Conv s1_mask_, s1_offset_;
  ad::Conv s2_mask_, s2_offset_;
};

/// Point assembly per voxel: (offset + center) * mask, mask broadcast over
/// xyz. `mask` [N, 1, ...], `offset` [N, 3, ...], `centers` [3, V].
Tensor reconstruct_points(const Tensor& mask, const Tensor& offset,
                          std::span<const double> centers);

}  // namespace densedet
