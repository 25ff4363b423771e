#include "densedet/detector.hpp"

#include <algorithm>
#include <cmath>

#include "densedet/autodiff/ops.hpp"
#include "densedet/error.hpp"

namespace densedet {

using ad::ConvKind;

void validate(const ArchConfig& arch) {
  validate(arch.grid);
  const auto& s = arch.grid.shape;
  if (s[0] % (4 * kBackboneStride) != 0 || s[1] % (4 * kBackboneStride) != 0) {
    fail(ErrorCode::kInvalidConfig, "grid x/y size must be a multiple of 16");
  }
  if (s[2] % (2 * kBackboneStride) != 0) {
    fail(ErrorCode::kInvalidConfig, "grid z size must be a multiple of 8");
  }
  for (auto c : {arch.encoder_hidden, arch.encoder_channels, arch.stage1_channels,
                 arch.stage2_channels, arch.bev_channels, arch.head_channels, arch.s2d_channels,
                 arch.pcr_channels, arch.num_classes}) {
    if (c == 0) fail(ErrorCode::kInvalidConfig, "architecture widths must be positive");
  }
  const auto depth = static_cast<std::size_t>(s[2] / kBackboneStride);
  if (arch.bev_channels % depth != 0) {
    fail(ErrorCode::kInvalidConfig, "bev_channels must be divisible by the BEV depth " +
                                        std::to_string(depth));
  }
}

BevGrid bev_grid(const VoxelSpec& grid, std::int64_t stride) {
  const auto coarse = grid.coarsened(stride);
  return {coarse.origin.x, coarse.origin.y, coarse.cell.x, coarse.cell.y,
          static_cast<std::size_t>(coarse.shape[0]), static_cast<std::size_t>(coarse.shape[1])};
}

// --- voxelization ----------------------------------------------------------

VoxelInput voxelize(std::span<const PointCloud* const> clouds, const VoxelSpec& grid) {
  validate(grid);
  const std::size_t n = clouds.size();
  const auto vol = static_cast<std::size_t>(grid.volume());
  std::vector<double> feats(n * kVoxelInputChannels * vol, 0.0);
  std::vector<double> mask(n * vol, 0.0);
  std::vector<double> sums(4 * vol);
  std::vector<std::uint32_t> counts(vol);
  for (std::size_t b = 0; b < n; ++b) {
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0u);
    for (const auto& p : *clouds[b]) {
      const auto v = voxel_index(p, grid);
      if (!v) continue;
      const auto j = static_cast<std::size_t>(grid.linear(*v));
      ++counts[j];
      sums[4 * j] += p.x;
      sums[4 * j + 1] += p.y;
      sums[4 * j + 2] += p.z;
      sums[4 * j + 3] += p.feat;
    }
    double* f = feats.data() + b * kVoxelInputChannels * vol;
    for (std::size_t j = 0; j < vol; ++j) {
      if (counts[j] == 0) continue;
      mask[b * vol + j] = 1.0;
      const double inv = 1.0 / counts[j];
      const Vec3 c = grid.center(grid.unlinear(static_cast<std::int64_t>(j)));
      f[0 * vol + j] = (sums[4 * j] * inv - c.x) / grid.cell.x;
      f[1 * vol + j] = (sums[4 * j + 1] * inv - c.y) / grid.cell.y;
      f[2 * vol + j] = (sums[4 * j + 2] * inv - c.z) / grid.cell.z;
      f[3 * vol + j] = sums[4 * j + 3] * inv;
      f[4 * vol + j] = std::min(counts[j], 10u) / 10.0;
    }
  }
  const auto [nx, ny, nz] = grid.shape;
  const ad::Shape spatial{static_cast<std::size_t>(nz), static_cast<std::size_t>(ny),
                          static_cast<std::size_t>(nx)};
  return {Tensor::constant({n, kVoxelInputChannels, spatial[0], spatial[1], spatial[2]},
                           std::move(feats)),
          Tensor::constant({n, 1, spatial[0], spatial[1], spatial[2]}, std::move(mask))};
}

VoxelInput voxelize(const PointCloud& cloud, const VoxelSpec& grid) {
  const PointCloud* one[] = {&cloud};
  return voxelize(one, grid);
}

// --- encoder / backbone ----------------------------------------------------

VoxelEncoder::VoxelEncoder(ad::ParamStore& store, ad::Initializer& init, const std::string& name,
                           std::size_t hidden, std::size_t channels)
    : fc1_(store, init, name + ".fc1", {ConvKind::kConv3d, kVoxelInputChannels, hidden, 1, 1, 0, true}),
      fc2_(store, init, name + ".fc2", {ConvKind::kConv3d, hidden, channels, 1, 1, 0, true}) {}

Tensor VoxelEncoder::operator()(Tape& tape, const VoxelInput& input) const {
  const Tensor h = ad::gelu(fc2_(tape, ad::gelu(fc1_(tape, input.features))));
  return ad::mul_spatial(h, input.mask);
}

Backbone::Backbone(ad::ParamStore& store, ad::Initializer& init, const std::string& name,
                   std::size_t in_channels, std::size_t stage1, std::size_t stage2)
    : conv1_(store, init, name + ".conv1", {ConvKind::kConv3d, in_channels, stage1, 3, 2, 1, true}),
      conv2_(store, init, name + ".conv2", {ConvKind::kConv3d, stage1, stage2, 3, 2, 1, true}) {}

std::vector<Tensor> Backbone::propagate_mask(const Tensor& mask) {
  const Tensor m1 = ad::max_pool3d(mask, 3, 2, 1);
  return {m1, ad::max_pool3d(m1, 3, 2, 1)};
}

BackboneOutput Backbone::operator()(Tape& tape, const Tensor& features, const Tensor& mask) const {
  const auto masks = propagate_mask(mask);
  Tensor x = ad::mul_spatial(ad::gelu(conv1_(tape, features)), masks[0]);
  x = ad::mul_spatial(ad::gelu(conv2_(tape, x)), masks[1]);
  return {x, masks[1]};
}

Tensor bev_project(const Tensor& feature3d) {
  if (feature3d.rank() != 5) {
    fail(ErrorCode::kShapeMismatch, "bev_project: expected [N, C, D, H, W], got " +
                                        ad::shape_str(feature3d.shape()));
  }
  const auto& s = feature3d.shape();
  return ad::reshape(feature3d, {s[0], s[1] * s[2], s[3], s[4]});
}

Tensor bev_unproject(const Tensor& bev, std::size_t depth) {
  if (bev.rank() != 4 || depth == 0 || bev.dim(1) % depth != 0) {
    fail(ErrorCode::kShapeMismatch, "bev_unproject: " + ad::shape_str(bev.shape()) +
                                        " with depth " + std::to_string(depth));
  }
  const auto& s = bev.shape();
  return ad::reshape(bev, {s[0], s[1] / depth, depth, s[2], s[3]});
}

Tensor bev_occupancy(const Tensor& mask3d) {
  if (mask3d.rank() != 5 || mask3d.dim(1) != 1) {
    fail(ErrorCode::kShapeMismatch, "bev_occupancy: expected [N, 1, D, H, W]");
  }
  const std::size_t n = mask3d.dim(0), d = mask3d.dim(2), hw = mask3d.dim(3) * mask3d.dim(4);
  std::vector<double> out(n * hw, 0.0);
  const auto m = mask3d.data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t z = 0; z < d; ++z)
      for (std::size_t i = 0; i < hw; ++i) out[b * hw + i] = std::max(out[b * hw + i], m[(b * d + z) * hw + i]);
  return Tensor::constant({n, 1, mask3d.dim(3), mask3d.dim(4)}, std::move(out));
}

// --- heads -----------------------------------------------------------------

Heads::Heads(ad::ParamStore& store, ad::Initializer& init, const std::string& name,
             std::size_t in_channels, std::size_t width, std::size_t classes)
    : hm_hidden_(store, init, name + ".hm.hidden", {ConvKind::kConv2d, in_channels, width, 3, 1, 1, true}),
      hm_out_(store, init, name + ".hm.out", {ConvKind::kConv2d, width, classes, 1, 1, 0, true}),
      reg_hidden_(store, init, name + ".reg.hidden", {ConvKind::kConv2d, in_channels, width, 3, 1, 1, true}),
      reg_out_(store, init, name + ".reg.out",
               {ConvKind::kConv2d, width, kRegressionChannels, 1, 1, 0, true}) {
  auto& bias = hm_out_.bias()->value;
  std::fill(bias.begin(), bias.end(), kHeatmapBiasInit);
}

HeadOutputs Heads::operator()(Tape& tape, const Tensor& f_a, bool training) const {
  return {ad::sigmoid(hm_out_(tape, hm_hidden_(tape, f_a, training))),
          reg_out_(tape, reg_hidden_(tape, f_a, training))};
}

// --- detector --------------------------------------------------------------

Detector::Detector(const ArchConfig& arch, const NetworkOptions& options, std::uint64_t seed)
    : arch_(arch), options_(options) {
  validate(arch);
  ad::Initializer init(seed);
  const auto depth = static_cast<std::size_t>(arch.grid.shape[2] / kBackboneStride);
  encoder_ = VoxelEncoder(store_, init, "encoder", arch.encoder_hidden, arch.encoder_channels);
  backbone_ = Backbone(store_, init, "backbone", arch.encoder_channels, arch.stage1_channels,
                       arch.stage2_channels);
  reduce_ = ad::Conv(store_, init, "bev.reduce",
                     {ConvKind::kConv2d, arch.stage2_channels * depth, arch.bev_channels, 1, 1, 0, true});
  heads_ = Heads(store_, init, "head", arch.bev_channels, arch.head_channels, arch.num_classes);
  // Optional modules draw from their own streams so the shared skeleton is
  // initialized identically with or without them.
  if (options.s2d) {
    ad::Initializer s2d_init(seed ^ 0x5d2d5d2dULL);
    s2d_ = std::make_unique<S2DModule>(store_, s2d_init, "s2d", arch.bev_channels, arch.s2d_channels);
  }
  if (options.pcr) {
    ad::Initializer pcr_init(seed ^ 0x9c09c09cULL);
    pcr_ = std::make_unique<PCRModule>(store_, pcr_init, "pcr", arch.bev_channels, depth,
                                       arch.pcr_channels);
  }
}

DetectorOutputs Detector::forward(Tape& tape, const VoxelInput& input, bool training) const {
  DetectorOutputs out;
  const Tensor encoded = encoder_(tape, input);
  const auto bb = backbone_(tape, encoded, input.mask);
  out.bev_mask = bev_occupancy(bb.mask);
  out.f_c = ad::mul_spatial(ad::gelu(reduce_(tape, bev_project(bb.features))), out.bev_mask);
  if (s2d_) {
    auto s = (*s2d_)(tape, out.f_c, training);
    out.f_b = s.densified;
    out.f_a = s.fused;
  } else {
    out.f_b = out.f_c;
    out.f_a = out.f_c;
  }
  auto heads = heads_(tape, out.f_a, training);
  out.heatmap = heads.heatmap;
  out.regression = heads.regression;
  if (pcr_) out.pcr = (*pcr_)(tape, out.f_b, training);
  return out;
}

// --- targets / decode ------------------------------------------------------

double gaussian_radius(double height, double width, double min_overlap) {
  const double a1 = 1.0;
  const double b1 = height + width;
  const double c1 = width * height * (1.0 - min_overlap) / (1.0 + min_overlap);
  const double r1 = (b1 + std::sqrt(b1 * b1 - 4.0 * a1 * c1)) / 2.0;
  const double a2 = 4.0;
  const double b2 = 2.0 * (height + width);
  const double c2 = (1.0 - min_overlap) * width * height;
  const double r2 = (b2 + std::sqrt(b2 * b2 - 4.0 * a2 * c2)) / 2.0;
  const double a3 = 4.0 * min_overlap;
  const double b3 = -2.0 * min_overlap * (height + width);
  const double c3 = (min_overlap - 1.0) * width * height;
  const double r3 = (b3 + std::sqrt(b3 * b3 - 4.0 * a3 * c3)) / 2.0;
  return std::min({r1, r2, r3});
}

HeadTargets make_head_targets(std::span<const OrientedBox> boxes, const BevGrid& bev,
                              std::size_t classes, const HeatmapParams& params) {
  const std::size_t hw = bev.cells();
  HeadTargets t;
  t.heatmap.assign(classes * hw, 0.0);
  t.regression.assign(kRegressionChannels * hw, 0.0);
  t.peaks.assign(hw, 0);
  for (const auto& box : boxes) {
    const auto k = static_cast<std::size_t>(box.cls);
    if (k >= classes) continue;
    const double fx = (box.center.x - bev.x0) / bev.cell_x;
    const double fy = (box.center.y - bev.y0) / bev.cell_y;
    if (!(fx >= 0.0 && fy >= 0.0 && fx < static_cast<double>(bev.nx) &&
          fy < static_cast<double>(bev.ny))) {
      continue;
    }
    const auto ix = static_cast<std::int64_t>(std::floor(fx));
    const auto iy = static_cast<std::int64_t>(std::floor(fy));
    const double r = gaussian_radius(box.dims.x / bev.cell_x, box.dims.y / bev.cell_y,
                                     params.min_overlap);
    const int radius = std::max(params.min_radius, static_cast<int>(r));
    const double sigma = (2.0 * radius + 1.0) / 6.0;
    double* map = t.heatmap.data() + k * hw;
    for (int dy = -radius; dy <= radius; ++dy) {
      for (int dx = -radius; dx <= radius; ++dx) {
        const std::int64_t x = ix + dx, y = iy + dy;
        if (x < 0 || y < 0 || x >= static_cast<std::int64_t>(bev.nx) ||
            y >= static_cast<std::int64_t>(bev.ny)) {
          continue;
        }
        const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        double& cell = map[static_cast<std::size_t>(y) * bev.nx + static_cast<std::size_t>(x)];
        cell = std::max(cell, g);
      }
    }
    const std::size_t c = static_cast<std::size_t>(iy) * bev.nx + static_cast<std::size_t>(ix);
    const double target[kRegressionChannels] = {fx - static_cast<double>(ix),
                                                fy - static_cast<double>(iy),
                                                box.center.z,
                                                std::log(box.dims.x),
                                                std::log(box.dims.y),
                                                std::log(box.dims.z),
                                                std::sin(box.yaw),
                                                std::cos(box.yaw)};
    for (std::size_t r2 = 0; r2 < kRegressionChannels; ++r2) t.regression[r2 * hw + c] = target[r2];
    t.peaks[c] = 1;
  }
  return t;
}

std::vector<Detection> decode(std::span<const double> heatmap, std::span<const double> regression,
                              const BevGrid& bev, std::size_t classes,
                              const DecodeParams& params) {
  const std::size_t hw = bev.cells();
  if (heatmap.size() != classes * hw || regression.size() != kRegressionChannels * hw) {
    fail(ErrorCode::kShapeMismatch, "decode: map sizes do not match the BEV grid");
  }
  std::vector<Detection> dets;
  for (std::size_t k = 0; k < classes; ++k) {
    const double* map = heatmap.data() + k * hw;
    for (std::size_t y = 0; y < bev.ny; ++y) {
      for (std::size_t x = 0; x < bev.nx; ++x) {
        const double s = map[y * bev.nx + x];
        if (s < params.score_threshold) continue;
        bool peak = true;
        for (int dy = -1; dy <= 1 && peak; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const auto yy = static_cast<std::int64_t>(y) + dy;
            const auto xx = static_cast<std::int64_t>(x) + dx;
            if ((dx == 0 && dy == 0) || yy < 0 || xx < 0 ||
                yy >= static_cast<std::int64_t>(bev.ny) || xx >= static_cast<std::int64_t>(bev.nx)) {
              continue;
            }
            if (map[static_cast<std::size_t>(yy) * bev.nx + static_cast<std::size_t>(xx)] > s) {
              peak = false;
              break;
            }
          }
        }
        if (!peak) continue;
        const std::size_t c = y * bev.nx + x;
        const auto r = [&](std::size_t ch) { return regression[ch * hw + c]; };
        Detection d;
        d.score = s;
        d.box.center = {bev.x0 + (static_cast<double>(x) + r(0)) * bev.cell_x,
                        bev.y0 + (static_cast<double>(y) + r(1)) * bev.cell_y, r(2)};
        d.box.dims = {std::exp(r(3)), std::exp(r(4)), std::exp(r(5))};
        d.box.yaw = normalize_yaw(std::atan2(r(6), r(7)));
        d.box.cls = static_cast<ObjectClass>(k);
        dets.push_back(d);
      }
    }
  }
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  if (dets.size() > params.max_detections) dets.resize(params.max_detections);
  return dets;
}

std::vector<Detection> decode(const DetectorOutputs& out, std::size_t index, const BevGrid& bev,
                              const DecodeParams& params) {
  const std::size_t classes = out.heatmap.dim(1);
  const std::size_t hw = bev.cells();
  return decode(out.heatmap.data().subspan(index * classes * hw, classes * hw),
                out.regression.data().subspan(index * kRegressionChannels * hw, kRegressionChannels * hw),
                bev, classes, params);
}

}  // namespace densedet
