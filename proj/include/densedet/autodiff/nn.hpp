#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>

#include "densedet/autodiff/ops.hpp"
#include "densedet/autodiff/tensor.hpp"

namespace densedet::ad {

/// Seeded source for parameter initialization.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  /// Kaiming-uniform: U(-b, b) with b = sqrt(6 / fan_in).
  std::vector<double> kaiming_uniform(std::size_t count, std::size_t fan_in);
  std::vector<double> uniform(std::size_t count, double lo, double hi);

 private:
  std::mt19937_64 rng_;
};

enum class ConvKind { kConv2d, kConv3d, kDepthwise2d, kTranspose2d, kTranspose3d };

struct ConvSpec {
  ConvKind kind = ConvKind::kConv2d;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool bias = true;
};

/// Convolution whose weight/bias live in a ParamStore under
/// `<name>.weight` / `<name>.bias`.
class Conv {
 public:
  Conv() = default;
  Conv(ParamStore& store, Initializer& init, const std::string& name, const ConvSpec& spec);

  Tensor operator()(Tape& tape, const Tensor& x) const;

  const ConvSpec& spec() const { return spec_; }
  Parameter* weight() const { return weight_; }
  Parameter* bias() const { return bias_; }

 private:
  ConvSpec spec_;
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
};

class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(ParamStore& store, const std::string& name, std::size_t channels);

  Tensor operator()(Tape& tape, const Tensor& x, bool training) const;

 private:
  Parameter* gamma_ = nullptr;
  Parameter* beta_ = nullptr;
  Parameter* running_mean_ = nullptr;
  Parameter* running_var_ = nullptr;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, std::size_t channels);

  Tensor operator()(Tape& tape, const Tensor& x) const;

 private:
  Parameter* gamma_ = nullptr;
  Parameter* beta_ = nullptr;
};

}  // namespace densedet::ad
