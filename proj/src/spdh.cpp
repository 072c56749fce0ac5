#include "nowcast/spdh.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace nowcast {

void HeatmapSpec::validate() const {
  if (map_height <= 0 || map_width <= 0) throw std::invalid_argument("heatmap spec: map shape must be positive");
  if (stride < 1) throw std::invalid_argument("heatmap spec: stride must be >= 1");
  if (!(sigma_uv > 0.0) || !(sigma_uz > 0.0)) throw std::invalid_argument("heatmap spec: sigma must be positive");
  if (!(z_min < z_max)) throw std::invalid_argument("heatmap spec: z_min must be below z_max");
  if (n_z_bins != map_height) throw std::invalid_argument("heatmap spec: n_z_bins must equal map_height");
  if (!(delta_z() > 0.0)) throw std::invalid_argument("heatmap spec: delta_z must be positive");
}

HeatmapSpec HeatmapSpec::for_input(int input_height, int input_width, int stride,
                                   double sigma_uv, double sigma_uz, double z_min, double z_max) {
  HeatmapSpec s;
  s.map_height = input_height / stride;
  s.map_width = input_width / stride;
  s.stride = stride;
  s.sigma_uv = sigma_uv;
  s.sigma_uz = sigma_uz;
  s.z_min = z_min;
  s.z_max = z_max;
  s.n_z_bins = s.map_height;
  s.validate();
  return s;
}

SPDHMaps::SPDHMaps(const HeatmapSpec& s, int joints)
    : spec(s), joint_count(joints),
      uv(static_cast<size_t>(joints) * s.map_height * s.map_width, 0.0),
      uz(static_cast<size_t>(joints) * s.map_height * s.map_width, 0.0) {}

namespace {

void render_gaussian_into(double* map, double center_row, double center_col,
                          const HeatmapSpec& spec, double sigma) {
  const int h = spec.map_height;
  const int w = spec.map_width;
  const double cut = 3.0 * sigma;
  if (center_row < -cut || center_row > h - 1 + cut || center_col < -cut || center_col > w - 1 + cut) {
    std::fill(map, map + static_cast<size_t>(h) * w, 0.0);
    return;
  }
  // Separable outer product: exp(-(dr^2+dc^2)/2s^2) = er[r] * ec[c].
  std::vector<double> er(h), ec(w);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int r = 0; r < h; ++r) {
    const double d = r - center_row;
    er[r] = std::exp(-d * d * inv);
  }
  for (int c = 0; c < w; ++c) {
    const double d = c - center_col;
    ec[c] = std::exp(-d * d * inv);
  }
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) map[static_cast<size_t>(r) * w + c] = er[r] * ec[c];
}

}  // namespace

std::vector<double> render_gaussian(double center_row, double center_col,
                                    const HeatmapSpec& spec, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("render_gaussian: sigma must be positive");
  std::vector<double> map(static_cast<size_t>(spec.map_height) * spec.map_width, 0.0);
  render_gaussian_into(map.data(), center_row, center_col, spec, sigma);
  return map;
}

int z_to_bin(double z, const HeatmapSpec& spec) {
  if (z < spec.z_min || z >= spec.z_max)
    throw std::out_of_range("z_to_bin: depth " + std::to_string(z) + " outside [" + std::to_string(spec.z_min) +
                            ", " + std::to_string(spec.z_max) + ")");
  const int bin = static_cast<int>(std::floor((z - spec.z_min) / spec.delta_z()));
  return std::clamp(bin, 0, spec.n_z_bins - 1);
}

double bin_to_z(int bin, const HeatmapSpec& spec) {
  if (bin < 0 || bin >= spec.n_z_bins) throw std::invalid_argument("bin_to_z: bin index out of range");
  return spec.z_min + (bin + 0.5) * spec.delta_z();
}

SPDHMaps encode_pose(const Pose3D& pose, const CameraIntrinsics& K, const HeatmapSpec& spec) {
  SPDHMaps maps(spec, pose.joint_count());
  for (int j = 0; j < pose.joint_count(); ++j) {
    if (!pose.joint_valid(j)) continue;  // all-zero map pair
    const Point3& p = pose.joints[j];
    if (p.z < spec.z_min || p.z >= spec.z_max)
      throw std::out_of_range("encode_pose: joint " + std::to_string(j) + " depth " + std::to_string(p.z) +
                              " outside [" + std::to_string(spec.z_min) + ", " + std::to_string(spec.z_max) + ")");
    const auto [u, v] = project_point(p, K);
    if (u < 0.0 || u >= K.width || v < 0.0 || v >= K.height)
      throw std::out_of_range("encode_pose: joint " + std::to_string(j) + " projects outside the image");
    render_gaussian_into(maps.uv_map(j), v / spec.stride, u / spec.stride, spec, spec.sigma_uv);
    render_gaussian_into(maps.uz_map(j), z_to_bin(p.z, spec), u / spec.stride, spec, spec.sigma_uz);
  }
  return maps;
}

namespace {

// First row-major occurrence of the maximum.
std::pair<int, double> argmax_map(const double* map, int h, int w, int* out_row, int* out_col) {
  double best = map[0];
  int best_i = 0;
  const size_t n = static_cast<size_t>(h) * w;
  for (size_t i = 1; i < n; ++i) {
    if (map[i] > best) {
      best = map[i];
      best_i = static_cast<int>(i);
    }
  }
  *out_row = best_i / w;
  *out_col = best_i % w;
  return {best_i, best};
}

}  // namespace

Pose3D decode_maps(const SPDHMaps& maps, const CameraIntrinsics& K, double peak_threshold) {
  const HeatmapSpec& spec = maps.spec;
  Pose3D pose(maps.joint_count);
  for (int j = 0; j < maps.joint_count; ++j) {
    int row = 0, col = 0;
    const auto [idx_uv, peak] = argmax_map(maps.uv_map(j), spec.map_height, spec.map_width, &row, &col);
    (void)idx_uv;
    const double u = static_cast<double>(col) * spec.stride;
    const double v = static_cast<double>(row) * spec.stride;
    int zrow = 0, zcol = 0;
    argmax_map(maps.uz_map(j), spec.map_height, spec.map_width, &zrow, &zcol);
    const double z = bin_to_z(zrow, spec);
    // Low-confidence joints keep their decoded coordinates but are flagged
    // invalid so metrics and callers can skip them.
    pose.joints[j] = backproject_pixel(u, v, z, K);
    pose.valid[j] = peak >= peak_threshold ? 1 : 0;
  }
  return pose;
}

double codec_error_bound(const HeatmapSpec& spec, const CameraIntrinsics& K) {
  const double half_bin = 0.5 * spec.delta_z();
  const double half_px = 0.5 * spec.stride * spec.z_max * (1.0 / K.fx + 1.0 / K.fy);
  const double tan_x = std::max(K.cx, K.width - 1.0 - K.cx) / K.fx;
  const double tan_y = std::max(K.cy, K.height - 1.0 - K.cy) / K.fy;
  return half_bin + half_px + half_bin * (tan_x + tan_y);
}

}  // namespace nowcast
