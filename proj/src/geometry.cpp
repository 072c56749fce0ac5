#include "nowcast/geometry.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace nowcast {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("intrinsics: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw std::invalid_argument("intrinsics: resolution must be positive");
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height))
    throw std::invalid_argument("intrinsics: principal point outside the sensor");
}

int DepthFrame::valid_count() const {
  int n = 0;
  for (float v : values_)
    if (v > 0.0f) ++n;
  return n;
}

int XYZImage::valid_count() const {
  int n = 0;
  for (std::uint8_t m : mask_)
    if (m) ++n;
  return n;
}

RigidTransform RigidTransform::rotation_about(const Eigen::Vector3d& axis, double angle_rad) {
  RigidTransform t;
  t.rotation = Eigen::AngleAxisd(angle_rad, axis.normalized()).toRotationMatrix();
  return t;
}

Point3 backproject_pixel(double u, double v, double z, const CameraIntrinsics& K) {
  if (!(z > 0.0)) throw std::invalid_argument("backproject_pixel: z must be positive");
  if (u < 0.0 || u >= K.width || v < 0.0 || v >= K.height)
    throw std::invalid_argument("backproject_pixel: pixel (" + std::to_string(u) + ", " + std::to_string(v) +
                                ") outside image bounds");
  return {(u - K.cx) * z / K.fx, (v - K.cy) * z / K.fy, z};
}

std::pair<double, double> project_point(const Point3& p, const CameraIntrinsics& K) {
  if (!(p.z > 0.0)) throw std::invalid_argument("project_point: point behind the camera");
  return {K.fx * p.x / p.z + K.cx, K.fy * p.y / p.z + K.cy};
}

XYZImage depth_to_xyz(const DepthFrame& d, const CameraIntrinsics& K) {
  if (d.height() != K.height || d.width() != K.width)
    throw std::invalid_argument("depth_to_xyz: frame shape does not match intrinsics");
  XYZImage img(d.height(), d.width());
  for (int v = 0; v < d.height(); ++v) {
    for (int u = 0; u < d.width(); ++u) {
      const float z = d.at(v, u);
      if (z > 0.0f) img.set(v, u, backproject_pixel(u, v, static_cast<double>(z), K));
    }
  }
  return img;
}

DepthFrame splat_pointcloud(const std::vector<Point3>& points, const CameraIntrinsics& K) {
  DepthFrame out(K.height, K.width);
  for (const Point3& p : points) {
    if (!(p.z > 0.0)) continue;
    const auto [u, v] = project_point(p, K);
    const int ui = static_cast<int>(std::lround(u));
    const int vi = static_cast<int>(std::lround(v));
    if (ui < 0 || ui >= K.width || vi < 0 || vi >= K.height) continue;
    const float z = static_cast<float>(p.z);
    const float prev = out.at(vi, ui);
    if (prev == 0.0f || z < prev) out.set(vi, ui, z);
  }
  return out;
}

std::vector<Point3> xyz_to_pointcloud(const XYZImage& img) {
  std::vector<Point3> pts;
  pts.reserve(static_cast<size_t>(img.valid_count()));
  for (int v = 0; v < img.height(); ++v)
    for (int u = 0; u < img.width(); ++u)
      if (img.valid(v, u)) pts.push_back(img.at(v, u));
  return pts;
}

}  // namespace nowcast
