#pragma once

#include <string>

#include "densedet/autodiff/nn.hpp"

namespace densedet {

using ad::Tape;
using ad::Tensor;

/// Conv followed by batch norm and GELU.
class ConvBnAct {
 public:
  ConvBnAct() = default;
  ConvBnAct(ad::ParamStore& store, ad::Initializer& init, const std::string& name,
            const ad::ConvSpec& spec);
  Tensor operator()(Tape& tape, const Tensor& x, bool training) const;

 private:
  ad::Conv conv_;
  ad::BatchNorm bn_;
};

/// Depthwise 7x7 -> channel LayerNorm -> 1x1 expand (x4) -> GELU -> 1x1
/// contract, plus the identity shortcut.
class ConvNeXtBlock {
 public:
  static constexpr std::size_t kExpand = 4;

  ConvNeXtBlock() = default;
  ConvNeXtBlock(ad::ParamStore& store, ad::Initializer& init, const std::string& name,
                std::size_t width);
  /// Residual branch alone.
  Tensor inner(Tape& tape, const Tensor& x) const;
  Tensor operator()(Tape& tape, const Tensor& x) const;

 private:
  ad::Conv dw_;
  ad::LayerNorm ln_;
  ad::Conv expand_;
  ad::Conv contract_;
};

struct S2DOutput {
  Tensor densified;  // F_b
  Tensor fused;      // F_a
};

/// BEV encoder-decoder that spreads features into empty cells.
///
/// F_c -> two stride-2 convs (1/2, 1/4) -> 3 ConvNeXt blocks -> x2 transposed
/// conv -> concat with the 1/2-scale encoder output -> 3x3 conv -> x2
/// transposed conv = F_b.  F_a = 1x1(F_b) + 1x1(F_c), initialized to F_a = F_c
/// (identity on the F_c branch, zero weight on the F_b branch).
class S2DModule {
 public:
  static constexpr std::size_t kBlocks = 3;

  S2DModule() = default;
  /// `channels` is the BEV width of F_c; `width` the inner width.
  S2DModule(ad::ParamStore& store, ad::Initializer& init, const std::string& name,
            std::size_t channels, std::size_t width);

  /// Throws kShapeMismatch unless H and W are divisible by 4.
  S2DOutput operator()(Tape& tape, const Tensor& f_c, bool training) const;

  const ConvNeXtBlock& block(std::size_t i) const { return blocks_.at(i); }

 private:
  std::size_t channels_ = 0;
  ConvBnAct down1_;
  ConvBnAct down2_;
  std::vector<ConvNeXtBlock> blocks_;
  ConvBnAct up1_;
  ConvBnAct merge_;
  ConvBnAct up2_;
  ad::Conv fuse_b_;
  ad::Conv fuse_c_;
};

}  // namespace densedet
