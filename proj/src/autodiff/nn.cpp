#include "densedet/autodiff/nn.hpp"

#include <cmath>

#include "densedet/error.hpp"

namespace densedet::ad {

std::vector<double> Initializer::uniform(std::size_t count, double lo, double hi) {
  std::vector<double> out(count);
  // 53 random mantissa bits; avoids implementation-defined distributions.
  for (auto& v : out) {
    const double u = static_cast<double>(rng_() >> 11) * 0x1p-53;
    v = lo + (hi - lo) * u;
  }
  return out;
}

std::vector<double> Initializer::kaiming_uniform(std::size_t count, std::size_t fan_in) {
  const double bound = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  return uniform(count, -bound, bound);
}

Conv::Conv(ParamStore& store, Initializer& init, const std::string& name, const ConvSpec& spec)
    : spec_(spec) {
  const bool three_d = spec.kind == ConvKind::kConv3d || spec.kind == ConvKind::kTranspose3d;
  const std::size_t taps = three_d ? spec.kernel * spec.kernel * spec.kernel
                                   : spec.kernel * spec.kernel;
  Shape shape;
  std::size_t fan_in = 0;
  switch (spec.kind) {
    case ConvKind::kConv2d:
    case ConvKind::kConv3d:
      shape = {spec.out_channels, spec.in_channels};
      fan_in = spec.in_channels * taps;
      break;
    case ConvKind::kDepthwise2d:
      if (spec.in_channels != spec.out_channels) {
        fail(ErrorCode::kInvalidConfig, name + ": depthwise conv keeps the channel count");
      }
      shape = {spec.out_channels, 1};
      fan_in = taps;
      break;
    case ConvKind::kTranspose2d:
    case ConvKind::kTranspose3d:
      shape = {spec.in_channels, spec.out_channels};
      fan_in = spec.in_channels * taps;
      break;
  }
  for (int a = 0; a < (three_d ? 3 : 2); ++a) shape.push_back(spec.kernel);
  const auto count = numel(shape);
  weight_ = &store.add(name + ".weight", shape, init.kaiming_uniform(count, fan_in));
  if (spec.bias) {
    bias_ = &store.add(name + ".bias", {spec.out_channels},
                       std::vector<double>(spec.out_channels, 0.0));
  }
}

Tensor Conv::operator()(Tape& tape, const Tensor& x) const {
  const auto w = tape.param(*weight_);
  const auto b = bias_ ? tape.param(*bias_) : Tensor{};
  const ConvOptions opt{spec_.stride, spec_.padding, 1};
  switch (spec_.kind) {
    case ConvKind::kConv2d: return conv2d(x, w, b, opt);
    case ConvKind::kConv3d: return conv3d(x, w, b, opt);
    case ConvKind::kDepthwise2d: return depthwise_conv2d(x, w, b, spec_.padding);
    case ConvKind::kTranspose2d: return conv_transpose2d(x, w, b, opt);
    case ConvKind::kTranspose3d: return conv_transpose3d(x, w, b, opt);
  }
  return {};
}

BatchNorm::BatchNorm(ParamStore& store, const std::string& name, std::size_t channels) {
  gamma_ = &store.add(name + ".gamma", {channels}, std::vector<double>(channels, 1.0));
  beta_ = &store.add(name + ".beta", {channels}, std::vector<double>(channels, 0.0));
  running_mean_ = &store.add(name + ".running_mean", {channels},
                             std::vector<double>(channels, 0.0), false);
  running_var_ = &store.add(name + ".running_var", {channels},
                            std::vector<double>(channels, 1.0), false);
}

Tensor BatchNorm::operator()(Tape& tape, const Tensor& x, bool training) const {
  return batch_norm(x, tape.param(*gamma_), tape.param(*beta_), running_mean_->value,
                    running_var_->value, training);
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, std::size_t channels) {
  gamma_ = &store.add(name + ".gamma", {channels}, std::vector<double>(channels, 1.0));
  beta_ = &store.add(name + ".beta", {channels}, std::vector<double>(channels, 0.0));
}

Tensor LayerNorm::operator()(Tape& tape, const Tensor& x) const {
  return layer_norm_channels(x, tape.param(*gamma_), tape.param(*beta_));
}

}  // namespace densedet::ad
