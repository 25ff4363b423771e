#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "densedet/autodiff/tensor.hpp"

namespace densedet::ad {

struct GradCheckOptions {
  double step = 1e-5;
  /// Checks at most this many coordinates per variable (evenly strided);
  /// 0 checks all.
  std::size_t max_coords_per_var = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_variable;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t coords_checked = 0;
};

/// |a - n| / max(1, |a|, |n|)
double relative_error(double analytic, double numeric);

/// Scalar function of one input tensor.
using InputFn = std::function<Tensor(Tape&, const Tensor& x)>;

/// Central differences on every coordinate of `x0` against the tape gradient.
/// Throws kNonFinite when `f` yields NaN/Inf.
GradCheckResult grad_check(const InputFn& f, const Shape& shape, const std::vector<double>& x0,
                           const GradCheckOptions& opt = {});

/// Scalar function reading its parameters from a store.
using ParamFn = std::function<Tensor(Tape&)>;

/// Checks gradients w.r.t. every trainable parameter of `store`.
GradCheckResult grad_check_params(const ParamFn& f, ParamStore& store,
                                  const GradCheckOptions& opt = {});

}  // namespace densedet::ad
