#include "densedet/pcr.hpp"

#include "densedet/autodiff/ops.hpp"
#include "densedet/error.hpp"

namespace densedet {

using ad::ConvKind;

PCRModule::PCRModule(ad::ParamStore& store, ad::Initializer& init, const std::string& name,
                     std::size_t channels, std::size_t depth, std::size_t width)
    : channels_(channels), depth_(depth) {
  if (depth == 0 || channels % depth != 0) {
    fail(ErrorCode::kInvalidConfig, name + ": channels " + std::to_string(channels) +
                                        " not divisible by depth " + std::to_string(depth));
  }
  const auto conv3 = [&](std::size_t in, std::size_t out, std::size_t stride) {
    return ad::ConvSpec{ConvKind::kConv3d, in, out, 3, stride, 1, true};
  };
  const ad::ConvSpec up{ConvKind::kTranspose3d, width, width, 2, 2, 0, true};
  lift_ = ConvBnAct(store, init, name + ".lift",
                    {ConvKind::kConv3d, channels / depth, width, 1, 1, 0, true});
  s1_conv1_ = ConvBnAct(store, init, name + ".s1.conv1", conv3(width, width, 2));
  s1_conv2_ = ConvBnAct(store, init, name + ".s1.conv2", conv3(width, width, 1));
  s1_up_ = ConvBnAct(store, init, name + ".s1.up", up);
  s1_mask_ = ad::Conv(store, init, name + ".s1.mask", {ConvKind::kConv3d, width, 1, 1, 1, 0, true});
  s1_offset_ =
      ad::Conv(store, init, name + ".s1.offset", {ConvKind::kConv3d, width, 3, 1, 1, 0, true});
  s2_conv1_ = ConvBnAct(store, init, name + ".s2.conv1", conv3(width, width, 1));
  s2_conv2_ = ConvBnAct(store, init, name + ".s2.conv2", conv3(width, width, 1));
  s2_up_ = ConvBnAct(store, init, name + ".s2.up", up);
  s2_mask_ = ad::Conv(store, init, name + ".s2.mask", {ConvKind::kConv3d, width, 1, 1, 1, 0, true});
  s2_offset_ =
      ad::Conv(store, init, name + ".s2.offset", {ConvKind::kConv3d, width, 3, 1, 1, 0, true});
}

PCROutputs PCRModule::operator()(Tape& tape, const Tensor& f_b, bool training) const {
  if (f_b.rank() != 4 || f_b.dim(1) != channels_) {
    fail(ErrorCode::kShapeMismatch, "pcr: expected [N, " + std::to_string(channels_) +
                                        ", H, W], got " + ad::shape_str(f_b.shape()));
  }
  if (f_b.dim(2) % 2 != 0 || f_b.dim(3) % 2 != 0 || depth_ % 2 != 0) {
    fail(ErrorCode::kShapeMismatch, "pcr: grid must be even per axis, got " +
                                        ad::shape_str(f_b.shape()) + " depth " +
                                        std::to_string(depth_));
  }
  const Tensor grid = ad::reshape(
      f_b, {f_b.dim(0), channels_ / depth_, depth_, f_b.dim(2), f_b.dim(3)});
  Tensor x = lift_(tape, grid, training);
  PCROutputs out;
  x = s1_up_(tape, s1_conv2_(tape, s1_conv1_(tape, x, training), training), training);
  out.scales.push_back({ad::sigmoid(s1_mask_(tape, x)), s1_offset_(tape, x)});
  x = s2_up_(tape, s2_conv2_(tape, s2_conv1_(tape, x, training), training), training);
  out.scales.push_back({ad::sigmoid(s2_mask_(tape, x)), s2_offset_(tape, x)});
  return out;
}

Tensor reconstruct_points(const Tensor& mask, const Tensor& offset,
                          std::span<const double> centers) {
  if (offset.rank() < 2 || offset.dim(1) != 3 || mask.rank() != offset.rank() ||
      mask.dim(1) != 1 || mask.dim(0) != offset.dim(0)) {
    fail(ErrorCode::kShapeMismatch, "reconstruct_points: mask " + ad::shape_str(mask.shape()) +
                                        " vs offset " + ad::shape_str(offset.shape()));
  }
  const std::size_t batch = offset.dim(0);
  const std::size_t vol = offset.numel() / (3 * batch);
  if (centers.size() != 3 * vol) fail(ErrorCode::kShapeMismatch, "reconstruct_points: centers");
  std::vector<double> tiled(offset.numel());
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy(centers.begin(), centers.end(), tiled.begin() + static_cast<std::ptrdiff_t>(b * 3 * vol));
  }
  return ad::mul_spatial(ad::add(offset, Tensor::constant(offset.shape(), std::move(tiled))), mask);
}

}  // namespace densedet
