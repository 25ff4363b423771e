#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "densedet/autodiff/nn.hpp"
#include "densedet/geom.hpp"
#include "densedet/pcr.hpp"
#include "densedet/s2d.hpp"

namespace densedet {

/// Stride of the backbone (two stride-2 stages) relative to the voxel grid.
inline constexpr std::int64_t kBackboneStride = 4;
/// dx, dy (cell units), z, log l, log w, log h, sin yaw, cos yaw.
inline constexpr std::size_t kRegressionChannels = 8;
/// Mean offset from the voxel center (3, cell units), mean feat, point count.
inline constexpr std::size_t kVoxelInputChannels = 5;
/// Initial heatmap logit: sigmoid(-2.19) is about 0.1.
inline constexpr double kHeatmapBiasInit = -2.19;

struct ArchConfig {
  VoxelSpec grid{{-12.8, -12.8, -0.4}, {0.4, 0.4, 0.4}, {64, 64, 8}};
  std::size_t encoder_hidden = 16;
  std::size_t encoder_channels = 16;
  std::size_t stage1_channels = 32;
  std::size_t stage2_channels = 64;
  /// Width of F_c / F_b / F_a.
  std::size_t bev_channels = 64;
  std::size_t head_channels = 64;
  /// Inner width of the densification module (ConvNeXt blocks expand x4).
  std::size_t s2d_channels = 64;
  std::size_t pcr_channels = 16;
  std::size_t num_classes = kNumClasses;
};

/// Throws kInvalidConfig on impossible geometry or widths.
void validate(const ArchConfig& arch);

/// 2D grid of the detection heads.
struct BevGrid {
  double x0 = 0.0;
  double y0 = 0.0;
  double cell_x = 1.0;
  double cell_y = 1.0;
  std::size_t nx = 1;
  std::size_t ny = 1;

  std::size_t cells() const { return nx * ny; }
};

BevGrid bev_grid(const VoxelSpec& grid, std::int64_t stride = kBackboneStride);

/// Dense voxelized batch. Features are exactly zero where mask is zero.
struct VoxelInput {
  Tensor features;  // [N, 5, D, H, W]
  Tensor mask;      // [N, 1, D, H, W] of {0, 1}
};

/// Raw per-voxel statistics for each cloud; points outside the grid are
/// ignored.
VoxelInput voxelize(std::span<const PointCloud* const> clouds, const VoxelSpec& grid);
VoxelInput voxelize(const PointCloud& cloud, const VoxelSpec& grid);

/// Point MLP on occupied voxels: 1x1x1 conv -> GELU -> 1x1x1 conv -> GELU,
/// then multiplied by the occupancy mask.
class VoxelEncoder {
 public:
  VoxelEncoder() = default;
  VoxelEncoder(ad::ParamStore& store, ad::Initializer& init, const std::string& name,
               std::size_t hidden, std::size_t channels);
  Tensor operator()(Tape& tape, const VoxelInput& input) const;

 private:
  ad::Conv fc1_;
  ad::Conv fc2_;
};

struct BackboneOutput {
  Tensor features;  // [N, C2, D/4, H/4, W/4]
  Tensor mask;      // propagated occupancy, [N, 1, D/4, H/4, W/4]
};

/// Two stride-2 3D conv stages; after each conv + GELU the output is multiplied
/// by the occupancy mask max-pooled with the conv's own window, so features
/// never appear outside the occupied neighbourhood.
class Backbone {
 public:
  Backbone() = default;
  Backbone(ad::ParamStore& store, ad::Initializer& init, const std::string& name,
           std::size_t in_channels, std::size_t stage1, std::size_t stage2);
  BackboneOutput operator()(Tape& tape, const Tensor& features, const Tensor& mask) const;

  /// The mask after each stage, without running the convs.
  static std::vector<Tensor> propagate_mask(const Tensor& mask);

 private:
  ad::Conv conv1_;
  ad::Conv conv2_;
};

/// [N, C, D, H, W] -> [N, C*D, H, W] (z-slices become channels).
Tensor bev_project(const Tensor& feature3d);
/// Inverse of bev_project.
Tensor bev_unproject(const Tensor& bev, std::size_t depth);
/// Max over depth of a [N, 1, D, H, W] mask -> [N, 1, H, W] constant.
Tensor bev_occupancy(const Tensor& mask3d);

struct HeadOutputs {
  Tensor heatmap;     // [N, K, H, W], sigmoid
  Tensor regression;  // [N, 8, H, W]
};

/// Heatmap and regression stacks: 3x3 conv + BN + GELU -> 1x1 conv.
class Heads {
 public:
  Heads() = default;
  Heads(ad::ParamStore& store, ad::Initializer& init, const std::string& name,
        std::size_t in_channels, std::size_t width, std::size_t classes);
  HeadOutputs operator()(Tape& tape, const Tensor& f_a, bool training) const;

 private:
  ConvBnAct hm_hidden_;
  ad::Conv hm_out_;
  ConvBnAct reg_hidden_;
  ad::Conv reg_out_;
};

/// Optional training-time modules on top of the shared skeleton.
struct NetworkOptions {
  bool s2d = false;
  bool pcr = false;
};

struct DetectorOutputs {
  Tensor heatmap;
  Tensor regression;
  Tensor f_c;  // BEV feature before densification
  Tensor f_b;  // after densification (= f_c without the S2D module)
  Tensor f_a;  // head input (= f_c without the S2D module)
  Tensor bev_mask;
  PCROutputs pcr;  // empty without the PCR module
};

/// Encoder -> masked backbone -> BEV projection -> F_c = GELU(1x1) * BEV mask
/// -> [S2D] -> heads, with PCR on F_b when enabled.
class Detector {
 public:
  Detector(const ArchConfig& arch, const NetworkOptions& options, std::uint64_t seed);
  Detector(const Detector&) = delete;
  Detector& operator=(const Detector&) = delete;

  DetectorOutputs forward(Tape& tape, const VoxelInput& input, bool training) const;

  ad::ParamStore& params() { return store_; }
  const ad::ParamStore& params() const { return store_; }
  const ArchConfig& arch() const { return arch_; }
  const NetworkOptions& options() const { return options_; }
  BevGrid bev() const { return bev_grid(arch_.grid); }

 private:
  ArchConfig arch_;
  NetworkOptions options_;
  ad::ParamStore store_;
  VoxelEncoder encoder_;
  Backbone backbone_;
  ad::Conv reduce_;
  Heads heads_;
  std::unique_ptr<S2DModule> s2d_;
  std::unique_ptr<PCRModule> pcr_;
};

struct HeatmapParams {
  double min_overlap = 0.1;
  int min_radius = 2;
};

/// Largest Gaussian radius (cells) keeping IoU >= min_overlap for a box of
/// the given BEV size in cells (corner-shift rule).
double gaussian_radius(double length_cells, double width_cells, double min_overlap);

/// Training targets for one scene.
struct HeadTargets {
  std::vector<double> heatmap;     // [K, H, W]
  std::vector<double> regression;  // [8, H, W]
  std::vector<std::uint8_t> peaks; // [H, W]
};

/// Splats a Gaussian per box at its center cell (element-wise max across
/// boxes) and writes the regression target at the center cell. Boxes whose
/// center falls outside the grid are skipped.
HeadTargets make_head_targets(std::span<const OrientedBox> boxes, const BevGrid& bev,
                              std::size_t classes = kNumClasses, const HeatmapParams& params = {});

struct Detection {
  OrientedBox box;
  double score = 0.0;
};

struct DecodeParams {
  double score_threshold = 0.1;
  std::size_t max_detections = 100;
};

/// 3x3 local maxima above the threshold, boxes from the regression channels,
/// sorted by descending score.
std::vector<Detection> decode(std::span<const double> heatmap, std::span<const double> regression,
                              const BevGrid& bev, std::size_t classes,
                              const DecodeParams& params = {});
/// Decodes sample `index` of a batched output.
std::vector<Detection> decode(const DetectorOutputs& out, std::size_t index, const BevGrid& bev,
                              const DecodeParams& params = {});

}  // namespace densedet
