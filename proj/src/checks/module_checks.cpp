#include "densedet/module_checks.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>

#include "densedet/autodiff/ops.hpp"
#include "densedet/detector.hpp"
#include "densedet/error.hpp"
#include "densedet/losses.hpp"

namespace densedet {

namespace {

using namespace ad;

std::vector<double> uniform(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

Tensor C(Shape s, std::vector<double> v) { return Tensor::constant(std::move(s), std::move(v)); }

Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  return sum(mul(y, C(y.shape(), uniform(y.numel(), seed))));
}

// Moves parameters off symmetric starting points (zero biases, unit gammas).
void perturb(ParamStore& store, std::uint64_t seed) {
  for (auto* p : store.trainable()) {
    const auto noise = uniform(p->value.size(), seed++, -0.2, 0.2);
    for (std::size_t i = 0; i < noise.size(); ++i) p->value[i] += noise[i];
  }
}

GradCheckResult worst(const GradCheckResult& a, const GradCheckResult& b) {
  GradCheckResult r = a.max_rel_error >= b.max_rel_error ? a : b;
  r.coords_checked = a.coords_checked + b.coords_checked;
  return r;
}

struct Harness {
  std::uint64_t seed;
  GradCheckOptions opt;
  ParamStore store;
  Initializer init;

  Harness(std::uint64_t s, double step) : seed(s), opt{step, 0}, init(s * 7919 + 1) {}

  // Input and parameter gradients of f at a random input.
  GradCheckResult run(const Shape& shape, const InputFn& f, std::size_t max_coords = 0,
                      bool check_input = true) {
    perturb(store, seed + 100);
    const auto x0 = uniform(numel(shape), seed + 200);
    GradCheckResult r;
    if (check_input) r = grad_check(f, shape, x0, {opt.step, max_coords});
    if (!store.trainable().empty()) {
      const auto x = C(shape, x0);
      r = worst(r, grad_check_params([&](Tape& t) { return f(t, x); }, store, {opt.step, max_coords}));
    }
    return r;
  }
};

ArchConfig tiny_arch() {
  ArchConfig a;
  a.grid = {{-3.2, -3.2, -0.4}, {0.4, 0.4, 0.4}, {16, 16, 8}};
  a.encoder_hidden = 4;
  a.encoder_channels = 3;
  a.stage1_channels = 4;
  a.stage2_channels = 4;
  a.bev_channels = 4;
  a.head_channels = 4;
  a.s2d_channels = 4;
  a.pcr_channels = 3;
  return a;
}

VoxelInput random_voxels(const ArchConfig& arch, std::size_t n_points, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto& g = arch.grid;
  std::uniform_real_distribution<double> x(g.origin.x, g.origin.x + g.cell.x * g.shape[0]);
  std::uniform_real_distribution<double> y(g.origin.y, g.origin.y + g.cell.y * g.shape[1]);
  std::uniform_real_distribution<double> z(g.origin.z, g.origin.z + g.cell.z * g.shape[2]);
  std::uniform_real_distribution<double> f(0.0, 1.0);
  PointCloud cloud;
  for (std::size_t i = 0; i < n_points; ++i) cloud.push_back({x(rng), y(rng), z(rng), f(rng)});
  return voxelize(cloud, g);
}

// Each loss behind a conv so the gradient flows into parameters as well.
GradCheckResult check_loss(const std::string& which, std::uint64_t seed, double step) {
  Harness h(seed, step);
  const Conv conv(h.store, h.init, "head", {ConvKind::kConv2d, 2, 3, 3, 1, 1, true});
  const Shape in{2, 2, 4, 4};
  const std::size_t cells = 2 * 3 * 4 * 4;
  const auto teacher = uniform(cells, seed + 1);
  auto sparse_teacher = teacher;
  for (std::size_t i = 0; i < cells; i += 3) sparse_teacher[i] = 0.0;
  std::vector<std::uint8_t> mask(cells);
  for (std::size_t i = 0; i < cells; ++i) mask[i] = (i * 7 + seed) % 5 == 0;
  const auto probs = uniform(cells, seed + 2, 0.05, 0.95);
  std::map<std::string, InputFn> losses;
  losses["feature_mimic"] = [&](Tape& t, const Tensor& x) {
    return feature_mimic(conv(t, x), C({2, 3, 4, 4}, sparse_teacher), 10.0, 20.0);
  };
  losses["l_s2d"] = [&](Tape& t, const Tensor& x) {
    const auto y = conv(t, x);
    return l_s2d(y, C({2, 3, 4, 4}, sparse_teacher), gelu(y), C({2, 3, 4, 4}, teacher), 10.0, 20.0);
  };
  losses["l_mask"] = [&](Tape& t, const Tensor& x) {
    return l_mask(reshape(sigmoid(conv(t, x)), {2, 1, 3, 4, 4}), mask);
  };
  losses["l_offset"] = [&](Tape& t, const Tensor& x) {
    // Three channels as (dx, dy, dz) on a 1 x 4 x 4 grid.
    const auto off = reshape(conv(t, x), {2, 3, 1, 4, 4});
    std::vector<std::uint8_t> fg(2 * 16);
    for (std::size_t i = 0; i < fg.size(); ++i) fg[i] = i % 3 == 0;
    return l_offset(off, uniform(3 * 16, seed + 3), uniform(2 * 3 * 16, seed + 4), fg);
  };
  losses["focal_heatmap"] = [&](Tape& t, const Tensor& x) {
    auto target = probs;
    target[5] = target[40] = 1.0;
    return focal_heatmap(sigmoid(conv(t, x)), target);
  };
  losses["l_reg"] = [&](Tape& t, const Tensor& x) {
    std::vector<std::uint8_t> peaks(2 * 16);
    peaks[3] = peaks[20] = peaks[27] = 1;
    return l_reg(conv(t, x), teacher, peaks);
  };
  losses["hm_distill"] = [&](Tape& t, const Tensor& x) {
    auto target = probs;
    target[7] = 0.97;
    return hm_distill(sigmoid(conv(t, x)), C({2, 3, 4, 4}, target));
  };
  GradCheckResult r;
  for (const auto& [name, f] : losses) {
    if (which != "losses" && which != name) continue;
    // |x| terms (l_reg, l_offset) have kinks; random points avoid them almost surely.
    auto one = h.run(in, f);
    if (one.max_rel_error >= r.max_rel_error) one.worst_variable = name + ":" + one.worst_variable;
    r = worst(r, one);
  }
  return r;
}

const std::vector<std::string> kLosses{"feature_mimic", "l_s2d", "l_mask", "l_offset",
                                       "focal_heatmap", "l_reg", "hm_distill"};

}  // namespace

std::vector<std::string> checkable_modules() {
  std::vector<std::string> names{"conv2d",     "conv3d",     "depthwise2d", "transpose2d",
                                 "transpose3d", "batch_norm", "layer_norm",  "gelu",
                                 "sigmoid",    "encoder",    "backbone",    "heads",
                                 "convnext",   "s2d",        "pcr",         "detector"};
  names.insert(names.end(), kLosses.begin(), kLosses.end());
  names.push_back("losses");
  return names;
}

GradCheckResult check_module_gradients(const std::string& name, std::uint64_t seed, double step) {
  const auto known = checkable_modules();
  if (std::find(known.begin(), known.end(), name) == known.end()) {
    fail(ErrorCode::kUsage, "unknown module '" + name + "'");
  }
  if (name == "losses" || std::find(kLosses.begin(), kLosses.end(), name) != kLosses.end()) {
    return check_loss(name, seed, step);
  }
  Harness h(seed, step);
  const auto conv_case = [&](ConvKind kind, Shape in, std::size_t cin, std::size_t cout,
                             std::size_t k, std::size_t stride, std::size_t pad) {
    const Conv conv(h.store, h.init, name, {kind, cin, cout, k, stride, pad, true});
    return h.run(in, [&](Tape& t, const Tensor& x) { return weighted_sum(conv(t, x), seed + 5); });
  };
  if (name == "conv2d") return conv_case(ConvKind::kConv2d, {2, 3, 6, 6}, 3, 4, 3, 2, 1);
  if (name == "conv3d") return conv_case(ConvKind::kConv3d, {1, 2, 4, 5, 5}, 2, 3, 3, 2, 1);
  if (name == "depthwise2d") return conv_case(ConvKind::kDepthwise2d, {2, 3, 8, 8}, 3, 3, 7, 1, 3);
  if (name == "transpose2d") return conv_case(ConvKind::kTranspose2d, {2, 3, 3, 3}, 3, 2, 2, 2, 0);
  if (name == "transpose3d") return conv_case(ConvKind::kTranspose3d, {1, 2, 2, 3, 3}, 2, 3, 2, 2, 0);
  if (name == "batch_norm") {
    const BatchNorm bn(h.store, name, 3);
    return h.run({3, 3, 2, 2}, [&](Tape& t, const Tensor& x) { return weighted_sum(bn(t, x, true), seed + 5); });
  }
  if (name == "layer_norm") {
    const LayerNorm ln(h.store, name, 4);
    return h.run({2, 4, 3, 3}, [&](Tape& t, const Tensor& x) { return weighted_sum(ln(t, x), seed + 5); });
  }
  if (name == "gelu" || name == "sigmoid") {
    return h.run({2, 3, 4, 4}, [&](Tape&, const Tensor& x) {
      return weighted_sum(name == "gelu" ? gelu(scale(x, 3.0)) : sigmoid(scale(x, 3.0)), seed + 5);
    });
  }
  if (name == "encoder" || name == "backbone") {
    // The occupancy mask is a step function of the points, so only the
    // features are perturbed; the mask stays fixed.
    const auto arch = tiny_arch();
    const auto vox = random_voxels(arch, 60, seed + 6);
    const VoxelEncoder enc(h.store, h.init, "enc", arch.encoder_hidden, arch.encoder_channels);
    const Backbone bb(h.store, h.init, "bb", arch.encoder_channels, arch.stage1_channels,
                      arch.stage2_channels);
    const Shape shape = vox.features.shape();
    return h.run(
        shape,
        [&](Tape& t, const Tensor& x) {
          const auto features = mul_spatial(x, vox.mask);
          if (name == "encoder") return weighted_sum(enc(t, {features, vox.mask}), seed + 5);
          const auto e = enc(t, {features, vox.mask});
          return weighted_sum(bb(t, e, vox.mask).features, seed + 5);
        },
        16);
  }
  if (name == "heads") {
    const Heads heads(h.store, h.init, "heads", 4, 4, 3);
    return h.run({2, 4, 4, 4}, [&](Tape& t, const Tensor& x) {
      const auto o = heads(t, x, true);
      return add(weighted_sum(o.heatmap, seed + 5), weighted_sum(o.regression, seed + 6));
    });
  }
  if (name == "convnext") {
    const ConvNeXtBlock block(h.store, h.init, "block", 4);
    return h.run({2, 4, 8, 8}, [&](Tape& t, const Tensor& x) { return weighted_sum(block(t, x), seed + 5); },
                 32);
  }
  if (name == "s2d") {
    const S2DModule s2d(h.store, h.init, "s2d", 8, 4);
    return h.run({2, 8, 8, 8},
                 [&](Tape& t, const Tensor& x) {
                   const auto out = s2d(t, x, true);
                   return add(weighted_sum(out.densified, seed + 5), weighted_sum(out.fused, seed + 6));
                 },
                 32);
  }
  if (name == "pcr") {
    const PCRModule pcr(h.store, h.init, "pcr", 4, 2, 3);
    const auto c1 = uniform(3 * 2 * 4 * 4, seed + 7);
    const auto c2 = uniform(3 * 4 * 8 * 8, seed + 8);
    return h.run({2, 4, 4, 4},
                 [&](Tape& t, const Tensor& x) {
                   const auto out = pcr(t, x, true);
                   return add(weighted_sum(reconstruct_points(out.scales[0].mask, out.scales[0].offset, c1), seed + 5),
                              weighted_sum(reconstruct_points(out.scales[1].mask, out.scales[1].offset, c2), seed + 6));
                 },
                 32);
  }
  // Whole detector with both training modules, parameters only.
  const auto arch = tiny_arch();
  Detector det(arch, {true, true}, seed + 9);
  perturb(det.params(), seed + 100);
  const auto vox = random_voxels(arch, 120, seed + 6);
  return grad_check_params(
      [&](Tape& t) {
        const auto o = det.forward(t, vox, true);
        Tensor total = add(weighted_sum(o.heatmap, seed + 5), weighted_sum(o.regression, seed + 6));
        total = add(total, weighted_sum(o.f_b, seed + 7));
        for (std::size_t s = 0; s < o.pcr.scales.size(); ++s) {
          total = add(total, weighted_sum(o.pcr.scales[s].mask, seed + 8 + s));
          total = add(total, weighted_sum(o.pcr.scales[s].offset, seed + 10 + s));
        }
        return total;
      },
      det.params(), {step, 4});
}

double conv_adjoint_gap(std::uint64_t seed) {
  struct Case {
    bool three_d;
    std::size_t cin, cout, k, stride, pad, groups, size;
  };
  const Case cases[] = {{false, 3, 4, 3, 1, 1, 1, 6}, {false, 4, 6, 2, 2, 0, 2, 8},
                        {false, 2, 2, 3, 2, 1, 1, 7}, {true, 3, 2, 2, 2, 0, 1, 4},
                        {true, 2, 4, 3, 1, 1, 2, 5},  {true, 2, 3, 3, 2, 1, 1, 5}};
  double gap = 0.0;
  for (const auto& c : cases) {
    const std::size_t taps = c.three_d ? c.k * c.k * c.k : c.k * c.k;
    const Shape wshape = c.three_d ? Shape{c.cout, c.cin / c.groups, c.k, c.k, c.k}
                                   : Shape{c.cout, c.cin / c.groups, c.k, c.k};
    const Shape xshape = c.three_d ? Shape{2, c.cin, c.size, c.size, c.size}
                                   : Shape{2, c.cin, c.size, c.size};
    const auto w = C(wshape, uniform(c.cout * (c.cin / c.groups) * taps, seed + 1));
    const auto xv = uniform(numel(xshape), seed + 2);
    const ConvOptions opt{c.stride, c.pad, c.groups};
    const auto ax = c.three_d ? conv3d(C(xshape, xv), w, Tensor{}, opt) : conv2d(C(xshape, xv), w, Tensor{}, opt);
    const auto yv = uniform(ax.numel(), seed + 3);
    // The conv weight [O, C/g] is also the transposed-conv weight [C_in = O, C/g].
    const auto aty = c.three_d ? conv_transpose3d(C(ax.shape(), yv), w, Tensor{}, opt)
                               : conv_transpose2d(C(ax.shape(), yv), w, Tensor{}, opt);
    if (aty.shape() != xshape) {
      fail(ErrorCode::kShapeMismatch, "adjoint shape " + shape_str(aty.shape()) + " vs " + shape_str(xshape));
    }
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < yv.size(); ++i) lhs += ax.data()[i] * yv[i];
    for (std::size_t i = 0; i < xv.size(); ++i) rhs += xv[i] * aty.data()[i];
    gap = std::max(gap, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));
    ++seed;
  }
  return gap;
}

}  // namespace densedet
