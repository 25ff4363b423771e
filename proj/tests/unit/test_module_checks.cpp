#include <doctest.h>

#include <algorithm>

#include "densedet/error.hpp"
#include "densedet/module_checks.hpp"

using namespace densedet;

TEST_CASE("every module's tape gradient matches central differences") {
  const auto names = checkable_modules();
  for (const char* required : {"conv2d", "conv3d", "batch_norm", "layer_norm", "s2d", "pcr", "detector", "losses"})
    CHECK(std::find(names.begin(), names.end(), required) != names.end());
  for (const auto& name : names) {
    for (std::uint64_t seed : {0u, 1u}) {
      const auto r = check_module_gradients(name, seed);
      CAPTURE(name);
      CAPTURE(seed);
      CAPTURE(r.worst_variable);
      CHECK(r.coords_checked > 0);
      CHECK(r.max_rel_error < 1e-4);
    }
  }
  CHECK_THROWS_AS(check_module_gradients("warp_drive"), Error);
}

TEST_CASE("transposed convolutions are adjoint to their forward convolutions") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) CHECK(conv_adjoint_gap(seed) <= 1e-9);
}
