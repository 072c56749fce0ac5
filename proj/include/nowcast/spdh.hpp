#pragma once

#include "nowcast/geometry.hpp"
#include "nowcast/pose.hpp"

#include <vector>

namespace nowcast {

/// Shape and quantization of one semi-perspective decoupled heatmap stack.
/// The uz maps share the uv map shape, so n_z_bins == map_height.
struct HeatmapSpec {
  int map_height = 0;
  int map_width = 0;
  int stride = 1;          // input pixels per map pixel
  double sigma_uv = 2.0;   // map pixels
  double sigma_uz = 2.0;   // map pixels
  double z_min = 0.5;      // meters
  double z_max = 4.5;      // meters
  int n_z_bins = 0;

  double delta_z() const { return (z_max - z_min) / n_z_bins; }
  void validate() const;  // throws std::invalid_argument

  static HeatmapSpec for_input(int input_height, int input_width, int stride,
                               double sigma_uv, double sigma_uz, double z_min, double z_max);
};

/// Paired uv (image plane) and uz (quantized depth) heatmap stacks, one map
/// pair per joint, each map map_height x map_width row-major.
struct SPDHMaps {
  HeatmapSpec spec;
  int joint_count = 0;
  std::vector<double> uv;  // J * H * W
  std::vector<double> uz;  // J * H * W

  SPDHMaps() = default;
  SPDHMaps(const HeatmapSpec& s, int joints);

  size_t map_size() const { return static_cast<size_t>(spec.map_height) * spec.map_width; }
  double* uv_map(int j) { return uv.data() + j * map_size(); }
  const double* uv_map(int j) const { return uv.data() + j * map_size(); }
  double* uz_map(int j) { return uz.data() + j * map_size(); }
  const double* uz_map(int j) const { return uz.data() + j * map_size(); }
};

/// Decoded joints whose uv peak falls below this value are flagged invalid.
/// Ground-truth encodings peak at 1.0.
inline constexpr double kPeakThreshold = 0.1;

/// Unnormalized Gaussian exp(-((r-cr)^2 + (c-cc)^2) / (2 sigma^2)) sampled on
/// the map grid. Returns an all-zero map when the center lies farther than
/// 3 sigma outside the bounds.
std::vector<double> render_gaussian(double center_row, double center_col,
                                    const HeatmapSpec& spec, double sigma);

/// floor((z - z_min) / delta_z), clamped to the valid bin range.
/// Throws std::out_of_range for z outside [z_min, z_max).
int z_to_bin(double z, const HeatmapSpec& spec);

/// Bin center: z_min + (bin + 0.5) * delta_z. Throws std::invalid_argument
/// for an out-of-range bin.
double bin_to_z(int bin, const HeatmapSpec& spec);

/// Renders the uv map at the joint's projection and the uz map at
/// (depth bin, u / stride). Invalid joints produce all-zero map pairs.
/// Throws std::out_of_range naming the joint if its depth leaves
/// [z_min, z_max) or its projection leaves the image.
SPDHMaps encode_pose(const Pose3D& pose, const CameraIntrinsics& K, const HeatmapSpec& spec);

/// Hard argmax per map (ties break to the first row-major index), then
/// back-projection through K. Joints whose uv maximum is below
/// peak_threshold are marked invalid rather than raising.
Pose3D decode_maps(const SPDHMaps& maps, const CameraIntrinsics& K,
                   double peak_threshold = kPeakThreshold);

/// Worst-case per-joint 3D error of decode(encode(pose)) for in-range joints:
/// half a depth bin, the back-projected half-map-pixel in u and v, and the
/// lateral shift a half-bin depth change induces at the image border.
double codec_error_bound(const HeatmapSpec& spec, const CameraIntrinsics& K);

}  // namespace nowcast
