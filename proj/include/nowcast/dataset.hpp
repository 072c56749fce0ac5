#pragma once

#include "nowcast/armsim.hpp"
#include "nowcast/geometry.hpp"
#include "nowcast/pose.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace nowcast {

/// One training unit: a depth frame with its intrinsics, M past poses at
/// past_rate, the current ground-truth pose and the T future ones.
struct DatasetSample {
  DepthFrame depth;
  CameraIntrinsics intrinsics;
  PoseSequence past;
  Pose3D current;
  std::vector<Pose3D> future;
  std::vector<double> future_offsets_s;
  int sequence_index = 0;
  int frame_index = 0;
};

enum class Split { train, val, test, all };

struct GenerateConfig {
  ArmModel arm = ArmModel::default_model();
  CameraIntrinsics intrinsics{110.0, 110.0, 64.0, 48.0, 128, 96};
  TrajectorySpec trajectory;
  int n_sequences = 10;
  double duration_s = 8.0;
  double fps = 30.0;
  double z_min = 0.5;
  double z_max = 4.5;
  double past_rate_hz = 10.0;
  std::vector<double> future_offsets_s = {0.5, 1.0, 1.5, 2.0};
  double background_z = 0.0;
  // Per-sequence camera emulation: relative focal jitter plus arm base
  // placement ranges in the camera frame.
  double intrinsics_jitter = 0.03;
  double base_distance_min = 1.45;
  double base_distance_max = 1.85;
  double base_lateral_jitter = 0.18;
  double base_vertical_jitter = 0.10;
  double base_yaw_range = 0.6;    // radians, about camera Y
  double base_pitch_range = 0.35; // about camera X
  double base_roll_range = 0.6;   // about camera Z
};

struct SequenceInfo {
  std::string name;
  int n_frames = 0;
  CameraIntrinsics intrinsics;
};

struct DatasetManifest {
  int version = 1;
  std::uint64_t seed = 0;
  double fps = 30.0;
  int joint_count = 0;
  std::vector<std::string> joint_names;
  double z_min = 0.5;
  double z_max = 4.5;
  double past_rate_hz = 10.0;
  std::vector<double> future_offsets_s;
  double norm_x_half = 1.0;  // scene half-extent used for input normalization
  double norm_y_half = 1.0;
  CameraIntrinsics intrinsics_defaults;
  std::vector<SequenceInfo> sequences;
  std::string config_echo;  // generation config as JSON, for provenance

  std::string to_json() const;
  static DatasetManifest from_json(const std::string& text);
};

/// Bit-exact binary depth format: 16-byte header ("DPT1", u32 height,
/// u32 width, u32 reserved, little-endian) then height*width little-endian
/// 32-bit floats, row-major, meters, 0 = invalid.
void write_dpt(const std::filesystem::path& path, const DepthFrame& frame);
DepthFrame read_dpt(const std::filesystem::path& path);

/// Renders n_sequences of fps*duration frames each under
/// `<out_dir>/seq_<k>/depth_<n>.dpt` + `poses.json`, with a top-level
/// manifest.json. Fully deterministic in the seed; sequences render in
/// parallel workers.
DatasetManifest generate_dataset(const GenerateConfig& config, std::uint64_t seed,
                                 const std::filesystem::path& out_dir);

struct SequenceData {
  int index = 0;
  std::string name;
  CameraIntrinsics intrinsics;
  std::vector<DepthFrame> depth;  // empty when loaded poses-only
  std::vector<Pose3D> poses;
};

class DatasetReader {
public:
  explicit DatasetReader(const std::filesystem::path& dir);

  const DatasetManifest& manifest() const { return manifest_; }
  int sequence_count() const { return static_cast<int>(manifest_.sequences.size()); }

  /// Whole-sequence 80/20 train/test split by sequence index; the val split
  /// is the last 10% of the training sequences.
  std::vector<int> split_sequences(Split split) const;

  SequenceData load_sequence(int k, bool with_depth = true) const;

private:
  std::filesystem::path dir_;
  DatasetManifest manifest_;
};

struct SampleWindowSpec {
  int past_count = 10;           // M
  double past_rate_hz = 10.0;
  std::vector<double> future_offsets_s = {0.5, 1.0, 1.5, 2.0};
};

/// Frame indices with full past history and future coverage.
std::vector<int> valid_window_frames(int n_frames, double fps, const SampleWindowSpec& w);

/// Builds the sliding-window sample centered on `frame`.
DatasetSample make_sample(const SequenceData& seq, int frame, double fps, const SampleWindowSpec& w);

/// Deterministic stream of sliding-window samples over a split (sequence
/// ascending, frame ascending). Sequences are materialized one at a time.
class SampleStream {
public:
  SampleStream(const DatasetReader& reader, Split split, const SampleWindowSpec& w);

  bool next(DatasetSample& out);
  void reset();
  long total() const { return total_; }

private:
  const DatasetReader* reader_;
  SampleWindowSpec window_;
  double fps_;
  std::vector<int> sequences_;
  std::vector<std::vector<int>> frames_per_seq_;
  long total_ = 0;
  size_t seq_pos_ = 0;
  size_t frame_pos_ = 0;
  std::optional<SequenceData> current_;
};

/// Fraction of (frame, joint) pairs whose joint projects inside the image
/// with depth in [z_min, z_max). Used by the dataset validation pass.
double in_frustum_fraction(const SequenceData& seq, double z_min, double z_max);

}  // namespace nowcast
