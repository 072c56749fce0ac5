#pragma once

#include "nowcast/dataset.hpp"
#include "nowcast/geometry.hpp"
#include "nowcast/rng.hpp"

namespace nowcast {

/// Training-time augmentation ranges. The rigid perturbation translates the
/// point cloud up to +/-20 cm laterally and +/-30 cm in depth and rotates it
/// up to +/-5 degrees about the camera X and Z axes (or about Y when
/// rotate_about_y is set — the alternative reading of the axis convention).
struct AugmentParams {
  double xy_translation_range = 0.20;  // meters
  double z_translation_range = 0.30;   // meters
  double rotation_range_deg = 5.0;
  bool rotate_about_y = false;
  double pepper_fraction = 0.15;
  int dropout_count_min = 2;
  int dropout_count_max = 6;
  int dropout_size_min = 4;   // px per side
  int dropout_size_max = 20;  // px per side
  // Depth range used by the frustum rejection test; 0 disables the z check.
  double frustum_z_min = 0.0;
  double frustum_z_max = 0.0;

  void validate() const;

  static AugmentParams disabled() {
    AugmentParams p;
    p.xy_translation_range = 0.0;
    p.z_translation_range = 0.0;
    p.rotation_range_deg = 0.0;
    p.pepper_fraction = 0.0;
    p.dropout_count_min = 0;
    p.dropout_count_max = 0;
    return p;
  }
};

/// Draw order is fixed: theta_x, theta_z (or theta_y), tx, ty, tz.
RigidTransform sample_transform(const AugmentParams& params, Rng& rng);

Point3 apply_rigid(const RigidTransform& t, const Point3& p);
Pose3D apply_rigid(const RigidTransform& t, const Pose3D& pose);
std::vector<Point3> apply_rigid(const RigidTransform& t, const std::vector<Point3>& points);

/// Invalidates each currently valid pixel independently with the given
/// probability. Already-invalid pixels are untouched.
DepthFrame pepper_noise(const DepthFrame& d, double fraction, Rng& rng);

/// Zeroes k axis-aligned rectangles with k and sizes uniform in the
/// configured ranges; rectangles clip at the borders.
DepthFrame dropout_regions(const DepthFrame& d, const AugmentParams& params, Rng& rng);

struct AugmentResult {
  DatasetSample sample;
  bool rejected = false;  // transform pushed >50% of GT joints out of frustum
};

/// unproject -> shared rigid transform on cloud and all GT poses -> splat ->
/// pepper -> dropout. Intrinsics are unchanged.
AugmentResult augment_sample(const DatasetSample& s, const AugmentParams& params, Rng& rng);

}  // namespace nowcast
