#pragma once

#include "nowcast/geometry.hpp"

#include <cstdint>
#include <vector>

namespace nowcast {

/// J joint positions in camera coordinates with per-joint validity flags.
struct Pose3D {
  std::vector<Point3> joints;
  std::vector<std::uint8_t> valid;
  double timestamp = 0.0;

  Pose3D() = default;
  explicit Pose3D(int j) : joints(j), valid(j, 1) {}

  int joint_count() const { return static_cast<int>(joints.size()); }
  bool joint_valid(int j) const { return valid[j] != 0; }
};

/// Fixed-rate ordered pose history, oldest first.
struct PoseSequence {
  std::vector<Pose3D> poses;
  double rate_hz = 0.0;

  int size() const { return static_cast<int>(poses.size()); }
};

}  // namespace nowcast
