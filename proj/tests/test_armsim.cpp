#include "nowcast/armsim.hpp"
#include "nowcast/dataset.hpp"
#include "nowcast/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace nowcast;
namespace fs = std::filesystem;

namespace {

ArmModel planar_two_link() {
  ArmModel m;
  m.link_lengths = {0.5, 0.5};
  m.joint_axes = {Eigen::Vector3d::UnitZ(), Eigen::Vector3d::UnitZ()};
  m.joint_limits = {{-3.2, 3.2}, {-3.2, 3.2}};
  m.link_radius = 0.05;
  return m;
}

GenerateConfig small_config() {
  GenerateConfig c;
  c.intrinsics = {55.0, 55.0, 32.0, 24.0, 64, 48};
  c.z_min = 0.6;
  c.z_max = 2.6;
  c.base_distance_min = 1.35;
  c.base_distance_max = 1.70;
  c.n_sequences = 2;
  c.duration_s = 4.0;
  return c;
}

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("nowcast_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE("armsim") {

TEST_CASE("forward kinematics zero configuration") {
  const Pose3D pose = forward_kinematics(planar_two_link(), {0.0, 0.0});
  REQUIRE(pose.joint_count() == 3);
  CHECK(pose.joints[0].x == doctest::Approx(0.0));
  CHECK(pose.joints[1].x == doctest::Approx(0.5));
  CHECK(pose.joints[2].x == doctest::Approx(1.0));
  CHECK(pose.joints[2].y == doctest::Approx(0.0));
  CHECK(pose.joints[2].z == doctest::Approx(0.0));
}

TEST_CASE("forward kinematics rotation about +Z") {
  const Pose3D pose = forward_kinematics(planar_two_link(), {M_PI / 2, 0.0});
  CHECK(pose.joints[1].x == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(pose.joints[1].y == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(pose.joints[2].x == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(pose.joints[2].y == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("rigid links preserve segment lengths for any angles") {
  const ArmModel m = ArmModel::default_model();
  Rng rng(21);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> angles(m.joint_count());
    for (int k = 0; k < m.joint_count(); ++k)
      angles[k] = rng.uniform(m.joint_limits[k][0], m.joint_limits[k][1]);
    const Pose3D pose = forward_kinematics(m, angles);
    for (int k = 1; k < pose.joint_count(); ++k) {
      const double dx = pose.joints[k].x - pose.joints[k - 1].x;
      const double dy = pose.joints[k].y - pose.joints[k - 1].y;
      const double dz = pose.joints[k].z - pose.joints[k - 1].z;
      CHECK(std::sqrt(dx * dx + dy * dy + dz * dz) == doctest::Approx(m.link_lengths[k - 1]).epsilon(1e-12));
    }
  }
}

TEST_CASE("forward kinematics rejects out-of-limit angles") {
  CHECK_THROWS_AS(forward_kinematics(ArmModel::default_model(), {5.0, 0.0, 0.0, 0.0}), std::invalid_argument);
}

TEST_CASE("trajectory sample count and determinism") {
  const ArmModel m = ArmModel::default_model();
  TrajectorySpec spec;
  Rng a(77), b(77), c(78);
  const auto s1 = sample_trajectory(m, spec, 2.0, 30.0, a);
  CHECK(s1.size() == 60);
  const auto s2 = sample_trajectory(m, spec, 2.0, 30.0, b);
  CHECK(s1 == s2);
  const auto s3 = sample_trajectory(m, spec, 2.0, 30.0, c);
  CHECK(s1 != s3);
}

TEST_CASE("minimum-jerk segments come to rest at waypoints") {
  const ArmModel m = ArmModel::default_model();
  TrajectorySpec spec;
  spec.waypoint_hold_s = 0.2;
  spec.segment_duration_min_s = 1.0;
  spec.segment_duration_max_s = 2.0;
  Rng rng(5);
  const double rate = 60.0;
  const auto samples = sample_trajectory(m, spec, 10.0, rate, rng);
  // Find hold runs (consecutive equal samples) and check the step into the
  // run is already tiny: min-jerk boundary velocity is zero.
  int holds_checked = 0;
  for (size_t i = 2; i + 1 < samples.size(); ++i) {
    if (samples[i] == samples[i + 1] && samples[i - 1] != samples[i]) {
      for (size_t k = 0; k < samples[i].size(); ++k)
        CHECK(std::abs(samples[i][k] - samples[i - 1][k]) < 1e-3);
      ++holds_checked;
    }
  }
  CHECK(holds_checked >= 2);
}

TEST_CASE("render: arm behind the camera yields an all-invalid frame") {
  ArmModel m = ArmModel::default_model();
  m.base_pose.translation = Eigen::Vector3d(0.0, 0.0, -2.0);
  const Pose3D pose = forward_kinematics(m, {0.0, 0.0, 0.0, 0.0});
  const CameraIntrinsics K{55.0, 55.0, 32.0, 24.0, 64, 48};
  CHECK(render_depth(m, pose, K).valid_count() == 0);
}

TEST_CASE("render: sphere on the optical axis hits at z - r") {
  ArmModel m = ArmModel::default_model();
  m.link_radius = 0.25;
  Pose3D pose(2);
  pose.joints[0] = {0.0, 0.0, 2.0};
  pose.joints[1] = {0.0, 0.0, 2.0};  // degenerate capsule == sphere
  const CameraIntrinsics K{55.0, 55.0, 32.0, 24.0, 64, 48};
  const DepthFrame d = render_depth(m, pose, K);
  CHECK(d.at(24, 32) == 1.75f);
}

TEST_CASE("render: every depth lies within the capsule support bound") {
  ArmModel m = ArmModel::default_model();
  m.base_pose.translation = Eigen::Vector3d(0.0, 0.0, 1.5);
  const Pose3D pose = forward_kinematics(m, {0.4, -0.3, 0.6, -0.5});
  const CameraIntrinsics K{55.0, 55.0, 32.0, 24.0, 64, 48};
  const DepthFrame d = render_depth(m, pose, K);
  REQUIRE(d.valid_count() > 0);
  double zmin = 1e9, zmax = -1e9;
  for (const auto& j : pose.joints) {
    zmin = std::min(zmin, j.z);
    zmax = std::max(zmax, j.z);
  }
  for (int v = 0; v < K.height; ++v)
    for (int u = 0; u < K.width; ++u)
      if (d.valid(v, u)) {
        CHECK(d.at(v, u) >= zmin - m.link_radius - 1e-5);
        CHECK(d.at(v, u) <= zmax + m.link_radius + 1e-5);
      }
}

TEST_CASE("render: joint projections read back near the joint depth") {
  ArmModel m = ArmModel::default_model();
  m.base_pose.translation = Eigen::Vector3d(0.0, 0.05, 1.5);
  const Pose3D pose = forward_kinematics(m, {0.3, -0.2, 0.4, 0.1});
  const CameraIntrinsics K{55.0, 55.0, 32.0, 24.0, 64, 48};
  const DepthFrame d = render_depth(m, pose, K);
  for (const auto& j : pose.joints) {
    const auto [u, v] = project_point(j, K);
    const int ui = static_cast<int>(std::lround(u));
    const int vi = static_cast<int>(std::lround(v));
    REQUIRE(d.valid(vi, ui));
    // The front surface can only be nearer than the skeleton by the radius;
    // anything nearer means another link occludes.
    CHECK(d.at(vi, ui) <= j.z + m.link_radius + 1e-4);
  }
}

TEST_CASE("generate_dataset writes the expected tree and counts") {
  const fs::path dir = temp_dir("gen");
  const DatasetManifest manifest = generate_dataset(small_config(), 7, dir);
  CHECK(manifest.sequences.size() == 2);
  CHECK(manifest.sequences[0].n_frames == 120);
  CHECK(fs::exists(dir / "manifest.json"));
  CHECK(fs::exists(dir / "seq_0" / "poses.json"));
  CHECK(fs::exists(dir / "seq_0" / "depth_000000.dpt"));
  CHECK(fs::exists(dir / "seq_1" / "depth_000119.dpt"));
  CHECK_FALSE(fs::exists(dir / "seq_0" / "depth_000120.dpt"));
  fs::remove_all(dir);
}

TEST_CASE("regeneration with the same seed is byte-identical") {
  const fs::path d1 = temp_dir("gen_a");
  const fs::path d2 = temp_dir("gen_b");
  GenerateConfig cfg = small_config();
  cfg.n_sequences = 1;
  cfg.duration_s = 2.0;
  generate_dataset(cfg, 99, d1);
  generate_dataset(cfg, 99, d2);
  for (const auto& entry : fs::recursive_directory_iterator(d1)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), d1);
    std::ifstream a(entry.path(), std::ios::binary), b(d2 / rel, std::ios::binary);
    REQUIRE(b.good());
    const std::string ba((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    const std::string bb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(ba == bb);
  }
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("dataset round trip and frustum validity") {
  const fs::path dir = temp_dir("roundtrip");
  const DatasetManifest manifest = generate_dataset(small_config(), 3, dir);
  DatasetReader reader(dir);
  CHECK(reader.manifest().joint_count == 5);
  for (int k = 0; k < reader.sequence_count(); ++k) {
    const SequenceData seq = reader.load_sequence(k);
    CHECK(static_cast<int>(seq.poses.size()) == manifest.sequences[k].n_frames);
    CHECK(static_cast<int>(seq.depth.size()) == manifest.sequences[k].n_frames);
    CHECK(in_frustum_fraction(seq, manifest.z_min, manifest.z_max) >= 0.95);
  }
  fs::remove_all(dir);
}

TEST_CASE("kinematic continuity between consecutive frames") {
  const fs::path dir = temp_dir("continuity");
  GenerateConfig cfg = small_config();
  cfg.n_sequences = 1;
  generate_dataset(cfg, 5, dir);
  DatasetReader reader(dir);
  const SequenceData seq = reader.load_sequence(0, /*with_depth=*/false);
  // Loose bound: reach * sum of joint spans * peak min-jerk rate / fps.
  const ArmModel arm = ArmModel::default_model();
  double span_sum = 0.0, reach = 0.0;
  for (int k = 0; k < arm.joint_count(); ++k) {
    span_sum += arm.joint_limits[k][1] - arm.joint_limits[k][0];
    reach += arm.link_lengths[k];
  }
  const double bound = reach * span_sum * 1.875 / (cfg.trajectory.segment_duration_min_s * cfg.fps);
  for (size_t i = 1; i < seq.poses.size(); ++i) {
    for (int j = 0; j < seq.poses[i].joint_count(); ++j) {
      const double dx = seq.poses[i].joints[j].x - seq.poses[i - 1].joints[j].x;
      const double dy = seq.poses[i].joints[j].y - seq.poses[i - 1].joints[j].y;
      const double dz = seq.poses[i].joints[j].z - seq.poses[i - 1].joints[j].z;
      CHECK(std::sqrt(dx * dx + dy * dy + dz * dz) <= bound);
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("sliding windows require full history and future") {
  SampleWindowSpec w{10, 10.0, {0.5, 1.0, 1.5, 2.0}};
  const auto frames = valid_window_frames(120, 30.0, w);
  // 30 past frames and 60 future frames leave centers 30..59.
  REQUIRE(frames.size() == 30);
  CHECK(frames.front() == 30);
  CHECK(frames.back() == 59);

  SampleWindowSpec none{0, 10.0, {}};
  CHECK(valid_window_frames(120, 30.0, none).size() == 120);
}

TEST_CASE("samples carry uniformly spaced past timestamps") {
  const fs::path dir = temp_dir("windows");
  GenerateConfig cfg = small_config();
  cfg.n_sequences = 1;
  generate_dataset(cfg, 11, dir);
  DatasetReader reader(dir);
  SampleWindowSpec w{10, 10.0, {0.5, 1.0, 1.5, 2.0}};
  SampleStream stream(reader, Split::all, w);
  CHECK(stream.total() == 30);
  DatasetSample s;
  REQUIRE(stream.next(s));
  CHECK(s.past.size() == 10);
  for (int i = 1; i < s.past.size(); ++i)
    CHECK(s.past.poses[i].timestamp - s.past.poses[i - 1].timestamp == doctest::Approx(0.1).epsilon(1e-9));
  CHECK(s.current.timestamp - s.past.poses.back().timestamp == doctest::Approx(0.1).epsilon(1e-9));
  CHECK(s.future.size() == 4);
  CHECK(s.future[3].timestamp - s.current.timestamp == doctest::Approx(2.0).epsilon(1e-9));
  fs::remove_all(dir);
}

TEST_CASE("split by whole sequences") {
  const fs::path dir = temp_dir("split");
  GenerateConfig cfg = small_config();
  cfg.n_sequences = 10;
  cfg.duration_s = 0.2;  // tiny frames, we only need the manifest
  generate_dataset(cfg, 2, dir);
  DatasetReader reader(dir);
  const auto train = reader.split_sequences(Split::train);
  const auto val = reader.split_sequences(Split::val);
  const auto test = reader.split_sequences(Split::test);
  CHECK(train.size() + val.size() + test.size() == 10);
  CHECK(test == std::vector<int>{8, 9});
  CHECK(val == std::vector<int>{7});
  fs::remove_all(dir);
}

}  // TEST_SUITE
