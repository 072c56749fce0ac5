#include "nowcast/armsim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace nowcast {

void ArmModel::validate() const {
  const size_t n = link_lengths.size();
  if (n == 0) throw std::invalid_argument("arm model: at least one link required");
  if (joint_axes.size() != n || joint_limits.size() != n)
    throw std::invalid_argument("arm model: per-joint field sizes disagree");
  if (!(link_radius > 0.0)) throw std::invalid_argument("arm model: link radius must be positive");
  for (size_t k = 0; k < n; ++k) {
    if (!(link_lengths[k] > 0.0)) throw std::invalid_argument("arm model: link lengths must be positive");
    if (std::abs(joint_axes[k].norm() - 1.0) > 1e-9) throw std::invalid_argument("arm model: axes must be unit-norm");
    if (!(joint_limits[k][0] < joint_limits[k][1]))
      throw std::invalid_argument("arm model: joint limit min must be below max");
  }
}

ArmModel ArmModel::default_model() {
  ArmModel m;
  m.link_lengths = {0.30, 0.25, 0.20, 0.15};
  m.joint_axes = {Eigen::Vector3d::UnitZ(), Eigen::Vector3d::UnitY(), Eigen::Vector3d::UnitY(),
                  Eigen::Vector3d::UnitZ()};
  m.joint_limits = {{-1.2, 1.2}, {-1.0, 1.0}, {-1.2, 1.2}, {-1.4, 1.4}};
  m.link_radius = 0.04;
  m.base_pose = RigidTransform::identity();
  return m;
}

Pose3D forward_kinematics(const ArmModel& model, const std::vector<double>& angles_rad) {
  if (static_cast<int>(angles_rad.size()) != model.joint_count())
    throw std::invalid_argument("forward_kinematics: angle count does not match joint count");
  for (int k = 0; k < model.joint_count(); ++k) {
    if (angles_rad[k] < model.joint_limits[k][0] || angles_rad[k] > model.joint_limits[k][1])
      throw std::invalid_argument("forward_kinematics: joint " + std::to_string(k) + " angle out of limits");
  }
  Pose3D pose(model.keypoint_count());
  RigidTransform t = model.base_pose;
  pose.joints[0] = {t.translation.x(), t.translation.y(), t.translation.z()};
  for (int k = 0; k < model.joint_count(); ++k) {
    t = t.compose(RigidTransform::rotation_about(model.joint_axes[k], angles_rad[k]));
    const Point3 end = t.apply({model.link_lengths[k], 0.0, 0.0});
    pose.joints[k + 1] = end;
    RigidTransform shift;
    shift.translation = Eigen::Vector3d(model.link_lengths[k], 0.0, 0.0);
    t = t.compose(shift);
  }
  return pose;
}

namespace {

double min_jerk(double s) { return s * s * s * (10.0 + s * (-15.0 + 6.0 * s)); }

struct Segment {
  std::vector<double> from, to;
  double t_start, t_end;  // t_end == t_start for holds handled by lookup
};

}  // namespace

std::vector<std::vector<double>> sample_trajectory(const ArmModel& model, const TrajectorySpec& spec,
                                                   double duration_s, double rate_hz, Rng& rng) {
  if (!(duration_s > 0.0) || !(rate_hz > 0.0))
    throw std::invalid_argument("sample_trajectory: duration and rate must be positive");
  if (spec.n_waypoints < 2) throw std::invalid_argument("sample_trajectory: need at least two waypoints");

  const int n_joints = model.joint_count();
  std::vector<std::vector<double>> waypoints(spec.n_waypoints, std::vector<double>(n_joints));
  for (auto& w : waypoints)
    for (int k = 0; k < n_joints; ++k) w[k] = rng.uniform(model.joint_limits[k][0], model.joint_limits[k][1]);

  // Timeline of hold/move phases cycling through the waypoints.
  struct Phase {
    const std::vector<double>*from, *to;  // equal for holds
    double t0, t1;
  };
  std::vector<Phase> phases;
  double t = 0.0;
  int wp = 0;
  while (t < duration_s) {
    if (spec.waypoint_hold_s > 0.0) {
      phases.push_back({&waypoints[wp], &waypoints[wp], t, t + spec.waypoint_hold_s});
      t += spec.waypoint_hold_s;
    }
    const int next = (wp + 1) % spec.n_waypoints;
    const double dur = rng.uniform(spec.segment_duration_min_s, spec.segment_duration_max_s);
    phases.push_back({&waypoints[wp], &waypoints[next], t, t + dur});
    t += dur;
    wp = next;
  }

  const int n_samples = static_cast<int>(std::lround(duration_s * rate_hz));
  std::vector<std::vector<double>> samples(n_samples, std::vector<double>(n_joints));
  size_t phase = 0;
  for (int i = 0; i < n_samples; ++i) {
    const double ti = i / rate_hz;
    while (phase + 1 < phases.size() && ti >= phases[phase].t1) ++phase;
    const Phase& p = phases[phase];
    const double s = (p.t1 > p.t0) ? std::clamp((ti - p.t0) / (p.t1 - p.t0), 0.0, 1.0) : 0.0;
    const double a = (p.from == p.to) ? 0.0 : min_jerk(s);
    for (int k = 0; k < n_joints; ++k) samples[i][k] = (*p.from)[k] + a * ((*p.to)[k] - (*p.from)[k]);
  }
  return samples;
}

namespace {

// Nearest positive intersection of a unit ray from the origin with a capsule.
// Returns -1 if the ray misses.
double ray_capsule(const Eigen::Vector3d& rd, const Eigen::Vector3d& pa, const Eigen::Vector3d& pb, double r) {
  const Eigen::Vector3d ba = pb - pa;
  const Eigen::Vector3d oa = -pa;
  const double baba = ba.dot(ba);
  const double bard = ba.dot(rd);
  const double baoa = ba.dot(oa);
  const double rdoa = rd.dot(oa);
  const double oaoa = oa.dot(oa);
  double a = baba - bard * bard;
  double b = baba * rdoa - baoa * bard;
  double c = baba * oaoa - baoa * baoa - r * r * baba;
  double h = b * b - a * c;
  if (h >= 0.0 && a > 1e-18) {
    const double tcyl = (-b - std::sqrt(h)) / a;
    const double y = baoa + tcyl * bard;
    if (y > 0.0 && y < baba && tcyl > 0.0) return tcyl;
  }
  // End caps.
  double best = -1.0;
  for (const Eigen::Vector3d* cap : {&pa, &pb}) {
    const Eigen::Vector3d oc = -*cap;
    const double bc = rd.dot(oc);
    const double cc = oc.dot(oc) - r * r;
    const double hc = bc * bc - cc;
    if (hc >= 0.0) {
      const double tc = -bc - std::sqrt(hc);
      if (tc > 0.0 && (best < 0.0 || tc < best)) best = tc;
    }
  }
  return best;
}

}  // namespace

DepthFrame render_depth(const ArmModel& model, const Pose3D& pose, const CameraIntrinsics& K,
                        double background_z) {
  DepthFrame out(K.height, K.width);
  const int n_caps = pose.joint_count() - 1;
  std::vector<Eigen::Vector3d> joints(pose.joint_count());
  for (int j = 0; j < pose.joint_count(); ++j)
    joints[j] = Eigen::Vector3d(pose.joints[j].x, pose.joints[j].y, pose.joints[j].z);

  for (int v = 0; v < K.height; ++v) {
    for (int u = 0; u < K.width; ++u) {
      const Eigen::Vector3d dir((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
      const double dlen = dir.norm();
      const Eigen::Vector3d rd = dir / dlen;
      double best_z = (background_z > 0.0) ? background_z : -1.0;
      for (int k = 0; k < n_caps; ++k) {
        const double t = ray_capsule(rd, joints[k], joints[k + 1], model.link_radius);
        if (t > 0.0) {
          const double z = t * rd.z();
          if (z > 0.0 && (best_z < 0.0 || z < best_z)) best_z = z;
        }
      }
      if (best_z > 0.0) out.set(v, u, static_cast<float>(best_z));
    }
  }
  return out;
}

}  // namespace nowcast
