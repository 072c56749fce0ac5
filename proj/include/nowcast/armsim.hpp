#pragma once

#include "nowcast/geometry.hpp"
#include "nowcast/pose.hpp"
#include "nowcast/rng.hpp"

#include <array>
#include <vector>

namespace nowcast {

/// Serial revolute arm rendered as capsules. Keypoints are the base origin
/// plus each link end, expressed in camera frame via base_pose.
struct ArmModel {
  std::vector<double> link_lengths;                  // meters
  std::vector<Eigen::Vector3d> joint_axes;           // unit rotation axes
  std::vector<std::array<double, 2>> joint_limits;   // [min, max] radians
  double link_radius = 0.04;                         // capsule radius
  RigidTransform base_pose;

  int joint_count() const { return static_cast<int>(link_lengths.size()); }
  int keypoint_count() const { return joint_count() + 1; }
  void validate() const;

  /// 4 revolute joints, 5 keypoints, links 0.30/0.25/0.20/0.15 m, r = 0.04 m.
  static ArmModel default_model();
};

struct TrajectorySpec {
  int n_waypoints = 6;
  double waypoint_hold_s = 0.2;
  double segment_duration_min_s = 0.8;
  double segment_duration_max_s = 2.0;
};

/// Chained per-joint rotations about joint_axes with links along local +X.
/// Throws std::invalid_argument for out-of-limit angles.
Pose3D forward_kinematics(const ArmModel& model, const std::vector<double>& angles_rad);

/// Minimum-jerk interpolation between waypoints drawn uniformly within the
/// joint limits; the waypoint cycle repeats until `duration` is covered.
/// Returns round(duration * rate) angle vectors sampled at 1/rate spacing.
std::vector<std::vector<double>> sample_trajectory(const ArmModel& model, const TrajectorySpec& spec,
                                                   double duration_s, double rate_hz, Rng& rng);

/// Per-pixel ray-capsule intersection; nearest hit wins; background invalid.
/// background_z > 0 adds a flat backdrop plane at that depth.
DepthFrame render_depth(const ArmModel& model, const Pose3D& pose, const CameraIntrinsics& K,
                        double background_z = 0.0);

}  // namespace nowcast
