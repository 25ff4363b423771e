#include "densedet/s2d.hpp"

#include <algorithm>

#include "densedet/autodiff/ops.hpp"
#include "densedet/error.hpp"

namespace densedet {

using ad::ConvKind;

ConvBnAct::ConvBnAct(ad::ParamStore& store, ad::Initializer& init, const std::string& name,
                     const ad::ConvSpec& spec)
    : conv_(store, init, name + ".conv", spec), bn_(store, name + ".bn", spec.out_channels) {}

Tensor ConvBnAct::operator()(Tape& tape, const Tensor& x, bool training) const {
  return ad::gelu(bn_(tape, conv_(tape, x), training));
}

ConvNeXtBlock::ConvNeXtBlock(ad::ParamStore& store, ad::Initializer& init, const std::string& name,
                             std::size_t width)
    : dw_(store, init, name + ".dw", {ConvKind::kDepthwise2d, width, width, 7, 1, 3, true}),
      ln_(store, name + ".ln", width),
      expand_(store, init, name + ".expand",
              {ConvKind::kConv2d, width, kExpand * width, 1, 1, 0, true}),
      contract_(store, init, name + ".contract",
                {ConvKind::kConv2d, kExpand * width, width, 1, 1, 0, true}) {}

Tensor ConvNeXtBlock::inner(Tape& tape, const Tensor& x) const {
  return contract_(tape, ad::gelu(expand_(tape, ln_(tape, dw_(tape, x)))));
}

Tensor ConvNeXtBlock::operator()(Tape& tape, const Tensor& x) const {
  return ad::add(x, inner(tape, x));
}

S2DModule::S2DModule(ad::ParamStore& store, ad::Initializer& init, const std::string& name,
                     std::size_t channels, std::size_t width)
    : channels_(channels),
      down1_(store, init, name + ".down1", {ConvKind::kConv2d, channels, width, 3, 2, 1, true}),
      down2_(store, init, name + ".down2", {ConvKind::kConv2d, width, width, 3, 2, 1, true}),
      up1_(store, init, name + ".up1", {ConvKind::kTranspose2d, width, width, 2, 2, 0, true}),
      merge_(store, init, name + ".merge", {ConvKind::kConv2d, 2 * width, width, 3, 1, 1, true}),
      up2_(store, init, name + ".up2", {ConvKind::kTranspose2d, width, channels, 2, 2, 0, true}),
      fuse_b_(store, init, name + ".fuse_b", {ConvKind::kConv2d, channels, channels, 1, 1, 0, true}),
      fuse_c_(store, init, name + ".fuse_c",
              {ConvKind::kConv2d, channels, channels, 1, 1, 0, true}) {
  for (std::size_t i = 0; i < kBlocks; ++i) {
    blocks_.emplace_back(store, init, name + ".block" + std::to_string(i), width);
  }
  // Start as F_a = F_c so a student copied from a module-free teacher keeps
  // the teacher's function at step 0.
  auto& wb = fuse_b_.weight()->value;
  auto& wc = fuse_c_.weight()->value;
  std::fill(wb.begin(), wb.end(), 0.0);
  std::fill(wc.begin(), wc.end(), 0.0);
  for (std::size_t c = 0; c < channels; ++c) wc[c * channels + c] = 1.0;
}

S2DOutput S2DModule::operator()(Tape& tape, const Tensor& f_c, bool training) const {
  if (f_c.rank() != 4 || f_c.dim(1) != channels_) {
    fail(ErrorCode::kShapeMismatch, "s2d: expected [N, " + std::to_string(channels_) +
                                        ", H, W], got " + ad::shape_str(f_c.shape()));
  }
  if (f_c.dim(2) % 4 != 0 || f_c.dim(3) % 4 != 0) {
    fail(ErrorCode::kShapeMismatch,
         "s2d: H and W must be divisible by 4, got " + ad::shape_str(f_c.shape()));
  }
  const Tensor half = down1_(tape, f_c, training);
  Tensor x = down2_(tape, half, training);
  for (const auto& b : blocks_) x = b(tape, x);
  x = up1_(tape, x, training);
  x = merge_(tape, ad::concat({x, half}, 1), training);
  S2DOutput out;
  out.densified = up2_(tape, x, training);
  out.fused = ad::add(fuse_b_(tape, out.densified), fuse_c_(tape, f_c));
  return out;
}

}  // namespace densedet
