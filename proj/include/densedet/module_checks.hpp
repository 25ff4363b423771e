#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "densedet/autodiff/gradcheck.hpp"

namespace densedet {

/// Names accepted by check_module_gradients: single layers, network blocks,
/// the whole detector, and every loss composed with a small conv.
std::vector<std::string> checkable_modules();

/// Central-difference check of a small seeded instance against the tape
/// gradient, over the input (where it is continuous) and all parameters.
/// The reported error is the worst over every checked variable. Throws
/// kUsage for an unknown name.
ad::GradCheckResult check_module_gradients(const std::string& name, std::uint64_t seed = 0,
                                           double step = 1e-5);

/// Largest |<A x, y> - <x, A^T y>| / max(1, |<A x, y>|) over random conv /
/// transposed-conv pairs (2D, 3D, grouped, strided, padded).
double conv_adjoint_gap(std::uint64_t seed = 0);

}  // namespace densedet
