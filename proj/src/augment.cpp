#include "nowcast/augment.hpp"

#include <cmath>
#include <stdexcept>

namespace nowcast {

void AugmentParams::validate() const {
  if (xy_translation_range < 0.0 || z_translation_range < 0.0 || rotation_range_deg < 0.0)
    throw std::invalid_argument("augment: ranges must be non-negative");
  if (pepper_fraction < 0.0 || pepper_fraction > 1.0)
    throw std::invalid_argument("augment: pepper_fraction must be in [0, 1]");
  if (dropout_count_min < 0 || dropout_count_max < dropout_count_min)
    throw std::invalid_argument("augment: bad dropout count range");
  if (dropout_count_max > 0 && (dropout_size_min < 1 || dropout_size_max < dropout_size_min))
    throw std::invalid_argument("augment: bad dropout size range");
}

RigidTransform sample_transform(const AugmentParams& params, Rng& rng) {
  const double rot = params.rotation_range_deg * M_PI / 180.0;
  RigidTransform t;
  if (params.rotate_about_y) {
    const double ty = rng.uniform(-rot, rot);
    t.rotation = Eigen::AngleAxisd(ty, Eigen::Vector3d::UnitY()).toRotationMatrix();
  } else {
    const double tx = rng.uniform(-rot, rot);
    const double tz = rng.uniform(-rot, rot);
    t.rotation = (Eigen::AngleAxisd(tx, Eigen::Vector3d::UnitX()) *
                  Eigen::AngleAxisd(tz, Eigen::Vector3d::UnitZ()))
                     .toRotationMatrix();
  }
  t.translation = Eigen::Vector3d(rng.uniform(-params.xy_translation_range, params.xy_translation_range),
                                  rng.uniform(-params.xy_translation_range, params.xy_translation_range),
                                  rng.uniform(-params.z_translation_range, params.z_translation_range));
  return t;
}

Point3 apply_rigid(const RigidTransform& t, const Point3& p) { return t.apply(p); }

Pose3D apply_rigid(const RigidTransform& t, const Pose3D& pose) {
  Pose3D out = pose;
  for (auto& j : out.joints) j = t.apply(j);
  return out;
}

std::vector<Point3> apply_rigid(const RigidTransform& t, const std::vector<Point3>& points) {
  std::vector<Point3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(t.apply(p));
  return out;
}

DepthFrame pepper_noise(const DepthFrame& d, double fraction, Rng& rng) {
  if (fraction < 0.0 || fraction > 1.0) throw std::invalid_argument("pepper_noise: fraction must be in [0, 1]");
  DepthFrame out = d;
  if (fraction == 0.0) return out;
  for (int v = 0; v < out.height(); ++v)
    for (int u = 0; u < out.width(); ++u)
      if (out.valid(v, u) && rng.uniform() < fraction) out.set(v, u, 0.0f);
  return out;
}

DepthFrame dropout_regions(const DepthFrame& d, const AugmentParams& params, Rng& rng) {
  DepthFrame out = d;
  if (params.dropout_count_max == 0) return out;
  const int k = rng.uniform_int(params.dropout_count_min, params.dropout_count_max);
  for (int i = 0; i < k; ++i) {
    const int w = rng.uniform_int(params.dropout_size_min, params.dropout_size_max);
    const int h = rng.uniform_int(params.dropout_size_min, params.dropout_size_max);
    const int x0 = rng.uniform_int(0, out.width() - 1);
    const int y0 = rng.uniform_int(0, out.height() - 1);
    const int x1 = std::min(x0 + w, out.width());
    const int y1 = std::min(y0 + h, out.height());
    for (int v = y0; v < y1; ++v)
      for (int u = x0; u < x1; ++u) out.set(v, u, 0.0f);
  }
  return out;
}

namespace {

bool joint_in_frustum(const Point3& p, const CameraIntrinsics& K, const AugmentParams& params) {
  if (!(p.z > 0.0)) return false;
  if (params.frustum_z_max > 0.0 && (p.z < params.frustum_z_min || p.z >= params.frustum_z_max)) return false;
  const double u = K.fx * p.x / p.z + K.cx;
  const double v = K.fy * p.y / p.z + K.cy;
  return u >= 0.0 && u < K.width && v >= 0.0 && v < K.height;
}

}  // namespace

AugmentResult augment_sample(const DatasetSample& s, const AugmentParams& params, Rng& rng) {
  params.validate();
  const RigidTransform t = sample_transform(params, rng);

  AugmentResult res;
  res.sample = s;
  for (auto& pose : res.sample.past.poses) pose = apply_rigid(t, pose);
  res.sample.current = apply_rigid(t, res.sample.current);
  for (auto& pose : res.sample.future) pose = apply_rigid(t, pose);

  long in = 0, total = 0;
  const auto count_pose = [&](const Pose3D& pose) {
    for (int j = 0; j < pose.joint_count(); ++j) {
      if (!pose.joint_valid(j)) continue;
      ++total;
      if (joint_in_frustum(pose.joints[j], s.intrinsics, params)) ++in;
    }
  };
  for (const auto& pose : res.sample.past.poses) count_pose(pose);
  count_pose(res.sample.current);
  for (const auto& pose : res.sample.future) count_pose(pose);
  if (total > 0 && in * 2 < total) {
    res.rejected = true;
    return res;
  }

  const XYZImage xyz = depth_to_xyz(s.depth, s.intrinsics);
  const std::vector<Point3> cloud = apply_rigid(t, xyz_to_pointcloud(xyz));
  DepthFrame depth = splat_pointcloud(cloud, s.intrinsics);
  depth.set_timestamp(s.depth.timestamp());
  depth = pepper_noise(depth, params.pepper_fraction, rng);
  depth = dropout_regions(depth, params, rng);
  res.sample.depth = std::move(depth);
  return res;
}

}  // namespace nowcast
