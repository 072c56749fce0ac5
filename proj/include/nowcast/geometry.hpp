#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>
#include <vector>

namespace nowcast {

/// Pinhole camera. Camera frame: X right, Y down, Z forward (optical axis).
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  void validate() const;  // throws std::invalid_argument on bad fields
};

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

/// Per-pixel range along the optical axis, meters. 0 marks an invalid pixel.
class DepthFrame {
public:
  DepthFrame() = default;
  DepthFrame(int height, int width) : height_(height), width_(width), values_(static_cast<size_t>(height) * width, 0.0f) {}

  int height() const { return height_; }
  int width() const { return width_; }
  double timestamp() const { return timestamp_; }
  void set_timestamp(double t) { timestamp_ = t; }

  float at(int v, int u) const { return values_[static_cast<size_t>(v) * width_ + u]; }
  void set(int v, int u, float z) { values_[static_cast<size_t>(v) * width_ + u] = z; }
  bool valid(int v, int u) const { return at(v, u) > 0.0f; }
  int valid_count() const;

  const std::vector<float>& values() const { return values_; }
  std::vector<float>& values() { return values_; }

  bool operator==(const DepthFrame& o) const {
    return height_ == o.height_ && width_ == o.width_ && values_ == o.values_;
  }

private:
  int height_ = 0;
  int width_ = 0;
  std::vector<float> values_;
  double timestamp_ = 0.0;
};

/// Metric camera-frame coordinates per pixel plus a validity mask.
/// At valid pixels the Z channel equals the source depth exactly.
class XYZImage {
public:
  XYZImage() = default;
  XYZImage(int height, int width)
      : height_(height), width_(width),
        coords_(static_cast<size_t>(height) * width * 3, 0.0),
        mask_(static_cast<size_t>(height) * width, 0) {}

  int height() const { return height_; }
  int width() const { return width_; }

  Point3 at(int v, int u) const {
    const size_t i = (static_cast<size_t>(v) * width_ + u) * 3;
    return {coords_[i], coords_[i + 1], coords_[i + 2]};
  }
  void set(int v, int u, const Point3& p) {
    const size_t i = (static_cast<size_t>(v) * width_ + u) * 3;
    coords_[i] = p.x;
    coords_[i + 1] = p.y;
    coords_[i + 2] = p.z;
    mask_[static_cast<size_t>(v) * width_ + u] = 1;
  }
  bool valid(int v, int u) const { return mask_[static_cast<size_t>(v) * width_ + u] != 0; }
  int valid_count() const;

  const std::vector<double>& coords() const { return coords_; }
  const std::vector<std::uint8_t>& mask() const { return mask_; }

private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> coords_;
  std::vector<std::uint8_t> mask_;
};

struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Point3 apply(const Point3& p) const {
    const Eigen::Vector3d q = rotation * Eigen::Vector3d(p.x, p.y, p.z) + translation;
    return {q.x(), q.y(), q.z()};
  }
  RigidTransform compose(const RigidTransform& inner) const {
    return {rotation * inner.rotation, rotation * inner.translation + translation};
  }
  static RigidTransform identity() { return {}; }
  static RigidTransform rotation_about(const Eigen::Vector3d& axis, double angle_rad);
};

/// (u - cx) * z / fx, (v - cy) * z / fy, z. Requires z > 0 and (u, v) inside
/// the image. Throws std::invalid_argument otherwise.
Point3 backproject_pixel(double u, double v, double z, const CameraIntrinsics& K);

/// Continuous pixel coordinates of a camera-frame point; may fall outside the
/// image. Throws std::invalid_argument if p.z <= 0 (behind the camera).
std::pair<double, double> project_point(const Point3& p, const CameraIntrinsics& K);

/// Back-projects every valid pixel. Invalid pixels stay all-zero with the
/// mask cleared. Throws std::invalid_argument on shape mismatch.
XYZImage depth_to_xyz(const DepthFrame& d, const CameraIntrinsics& K);

/// Writes each point's z to the nearest pixel it projects to; the minimum z
/// wins on conflicts. Points behind the camera or outside the frame are
/// silently dropped.
DepthFrame splat_pointcloud(const std::vector<Point3>& points, const CameraIntrinsics& K);

/// Coordinates of all valid pixels in row-major order.
std::vector<Point3> xyz_to_pointcloud(const XYZImage& img);

}  // namespace nowcast
