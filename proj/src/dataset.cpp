#include "nowcast/dataset.hpp"

#include "nowcast/parallel.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace nowcast {

using nlohmann::json;

namespace {

json intrinsics_to_json(const CameraIntrinsics& K) {
  return json{{"fx", K.fx}, {"fy", K.fy}, {"cx", K.cx}, {"cy", K.cy}, {"width", K.width}, {"height", K.height}};
}

CameraIntrinsics intrinsics_from_json(const json& j) {
  CameraIntrinsics K;
  K.fx = j.at("fx");
  K.fy = j.at("fy");
  K.cx = j.at("cx");
  K.cy = j.at("cy");
  K.width = j.at("width");
  K.height = j.at("height");
  return K;
}

std::vector<std::string> default_joint_names(int j) {
  static const char* kNames[] = {"base", "shoulder", "elbow", "wrist", "tool"};
  std::vector<std::string> names;
  for (int i = 0; i < j; ++i) names.push_back(i < 5 ? kNames[i] : "joint" + std::to_string(i));
  return names;
}

}  // namespace

std::string DatasetManifest::to_json() const {
  json seqs = json::array();
  for (const auto& s : sequences)
    seqs.push_back(json{{"name", s.name}, {"n_frames", s.n_frames}, {"intrinsics", intrinsics_to_json(s.intrinsics)}});
  json j{{"version", version},
         {"seed", seed},
         {"fps", fps},
         {"joint_count", joint_count},
         {"joint_names", joint_names},
         {"z_min", z_min},
         {"z_max", z_max},
         {"past_rate_hz", past_rate_hz},
         {"future_offsets_s", future_offsets_s},
         {"norm_x_half", norm_x_half},
         {"norm_y_half", norm_y_half},
         {"intrinsics_defaults", intrinsics_to_json(intrinsics_defaults)},
         {"sequences", seqs}};
  if (!config_echo.empty()) j["config_echo"] = json::parse(config_echo);
  return j.dump(2) + "\n";
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
  const json j = json::parse(text);
  DatasetManifest m;
  m.version = j.at("version");
  m.seed = j.at("seed");
  m.fps = j.at("fps");
  m.joint_count = j.at("joint_count");
  m.joint_names = j.at("joint_names").get<std::vector<std::string>>();
  m.z_min = j.at("z_min");
  m.z_max = j.at("z_max");
  m.past_rate_hz = j.at("past_rate_hz");
  m.future_offsets_s = j.at("future_offsets_s").get<std::vector<double>>();
  m.norm_x_half = j.at("norm_x_half");
  m.norm_y_half = j.at("norm_y_half");
  m.intrinsics_defaults = intrinsics_from_json(j.at("intrinsics_defaults"));
  for (const auto& s : j.at("sequences"))
    m.sequences.push_back({s.at("name"), s.at("n_frames"), intrinsics_from_json(s.at("intrinsics"))});
  if (j.contains("config_echo")) m.config_echo = j.at("config_echo").dump();
  return m;
}

namespace {

constexpr char kDptMagic[4] = {'D', 'P', 'T', '1'};

void put_u32le(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_dpt(const std::filesystem::path& path, const DepthFrame& frame) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_dpt: cannot open " + path.string());
  os.write(kDptMagic, 4);
  put_u32le(os, static_cast<std::uint32_t>(frame.height()));
  put_u32le(os, static_cast<std::uint32_t>(frame.width()));
  put_u32le(os, 0);  // reserved
  static_assert(sizeof(float) == 4);
  for (float v : frame.values()) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32le(os, bits);
  }
  if (!os) throw std::runtime_error("write_dpt: write failed for " + path.string());
}

DepthFrame read_dpt(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_dpt: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kDptMagic, 4) != 0)
    throw std::runtime_error("read_dpt: bad magic in " + path.string() + " at byte 0");
  const std::uint32_t height = get_u32le(is);
  const std::uint32_t width = get_u32le(is);
  get_u32le(is);  // reserved
  if (!is || height == 0 || width == 0 || height > 1 << 16 || width > 1 << 16)
    throw std::runtime_error("read_dpt: bad header in " + path.string() + " at byte 4");
  DepthFrame frame(static_cast<int>(height), static_cast<int>(width));
  for (size_t i = 0; i < frame.values().size(); ++i) {
    const std::uint32_t bits = get_u32le(is);
    if (!is)
      throw std::runtime_error("read_dpt: truncated payload in " + path.string() + " at byte " +
                               std::to_string(16 + i * 4));
    float v;
    std::memcpy(&v, &bits, 4);
    frame.values()[i] = v;
  }
  return frame;
}

namespace {

struct Placement {
  RigidTransform base;
  double fraction = -1.0;
};

double frustum_fraction(const std::vector<Pose3D>& poses, const CameraIntrinsics& K, double z_lo, double z_hi) {
  long in = 0, total = 0;
  for (const Pose3D& p : poses) {
    for (int j = 0; j < p.joint_count(); ++j) {
      ++total;
      const Point3& q = p.joints[j];
      if (q.z < z_lo || q.z >= z_hi) continue;
      const double u = K.fx * q.x / q.z + K.cx;
      const double v = K.fy * q.y / q.z + K.cy;
      if (u >= 0.0 && u < K.width && v >= 0.0 && v < K.height) ++in;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(in) / total;
}

json generate_config_echo(const GenerateConfig& c) {
  json arm{{"link_lengths", c.arm.link_lengths}, {"link_radius", c.arm.link_radius}};
  return json{{"arm", arm},
              {"n_sequences", c.n_sequences},
              {"duration_s", c.duration_s},
              {"fps", c.fps},
              {"z_min", c.z_min},
              {"z_max", c.z_max},
              {"background_z", c.background_z},
              {"intrinsics_jitter", c.intrinsics_jitter},
              {"base_distance_min", c.base_distance_min},
              {"base_distance_max", c.base_distance_max},
              {"base_yaw_range", c.base_yaw_range},
              {"base_pitch_range", c.base_pitch_range},
              {"base_roll_range", c.base_roll_range},
              {"intrinsics", intrinsics_to_json(c.intrinsics)}};
}

}  // namespace

DatasetManifest generate_dataset(const GenerateConfig& config, std::uint64_t seed,
                                 const std::filesystem::path& out_dir) {
  config.arm.validate();
  config.intrinsics.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("generate_dataset: cannot create " + out_dir.string());

  const int n_frames = static_cast<int>(std::lround(config.duration_s * config.fps));
  std::vector<SequenceInfo> infos(config.n_sequences);

  parallel_for(config.n_sequences, [&](long begin, long end) {
    for (long k = begin; k < end; ++k) {
      Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(k));

      CameraIntrinsics K = config.intrinsics;
      const double fscale = 1.0 + rng.uniform(-config.intrinsics_jitter, config.intrinsics_jitter);
      K.fx *= fscale;
      K.fy *= fscale;
      K.cx += rng.uniform(-0.02, 0.02) * K.width;
      K.cy += rng.uniform(-0.02, 0.02) * K.height;

      const auto angles = sample_trajectory(config.arm, config.trajectory, config.duration_s, config.fps, rng);

      // Frustum-aware base placement: retry until nearly every joint stays
      // inside the image and depth range over the whole trajectory.
      const double z_margin = 0.03 * (config.z_max - config.z_min);
      Placement best;
      for (int attempt = 0; attempt < 60; ++attempt) {
        ArmModel arm = config.arm;
        RigidTransform base;
        base.translation = Eigen::Vector3d(rng.uniform(-config.base_lateral_jitter, config.base_lateral_jitter),
                                           rng.uniform(-config.base_vertical_jitter, config.base_vertical_jitter),
                                           rng.uniform(config.base_distance_min, config.base_distance_max));
        const double yaw = rng.uniform(-config.base_yaw_range, config.base_yaw_range);
        const double pitch = rng.uniform(-config.base_pitch_range, config.base_pitch_range);
        const double roll = rng.uniform(-config.base_roll_range, config.base_roll_range);
        base.rotation = (Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY()) *
                         Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitX()) *
                         Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitZ()))
                            .toRotationMatrix();
        arm.base_pose = base;
        std::vector<Pose3D> poses(angles.size());
        for (size_t i = 0; i < angles.size(); ++i) poses[i] = forward_kinematics(arm, angles[i]);
        const double frac =
            frustum_fraction(poses, K, config.z_min + z_margin, config.z_max - z_margin);
        if (frac > best.fraction) best = {base, frac};
        if (frac >= 0.99) break;
      }

      ArmModel arm = config.arm;
      arm.base_pose = best.base;

      const std::string name = "seq_" + std::to_string(k);
      const std::filesystem::path seq_dir = out_dir / name;
      std::error_code sec;
      std::filesystem::create_directories(seq_dir, sec);
      if (sec) throw std::runtime_error("generate_dataset: cannot create " + seq_dir.string());

      json poses_json = json::array();
      for (int i = 0; i < n_frames; ++i) {
        Pose3D pose = forward_kinematics(arm, angles[i]);
        pose.timestamp = i / config.fps;
        DepthFrame depth = render_depth(arm, pose, K, config.background_z);
        depth.set_timestamp(pose.timestamp);

        char fname[32];
        std::snprintf(fname, sizeof(fname), "depth_%06d.dpt", i);
        write_dpt(seq_dir / fname, depth);

        json joints = json::array();
        json valid = json::array();
        for (int j = 0; j < pose.joint_count(); ++j) {
          joints.push_back(json::array({pose.joints[j].x, pose.joints[j].y, pose.joints[j].z}));
          valid.push_back(pose.joint_valid(j));
        }
        poses_json.push_back(
            json{{"frame", i}, {"timestamp_s", pose.timestamp}, {"joints", joints}, {"valid", valid}});
      }
      std::ofstream os(seq_dir / "poses.json");
      if (!os) throw std::runtime_error("generate_dataset: cannot open " + (seq_dir / "poses.json").string());
      os << poses_json.dump() << "\n";
      if (!os) throw std::runtime_error("generate_dataset: write failed for " + (seq_dir / "poses.json").string());

      infos[k] = {name, n_frames, K};
    }
  });

  DatasetManifest manifest;
  manifest.seed = seed;
  manifest.fps = config.fps;
  manifest.joint_count = config.arm.keypoint_count();
  manifest.joint_names = default_joint_names(manifest.joint_count);
  manifest.z_min = config.z_min;
  manifest.z_max = config.z_max;
  manifest.past_rate_hz = config.past_rate_hz;
  manifest.future_offsets_s = config.future_offsets_s;
  // Normalization half-extents: the widest lateral coordinate any in-frustum
  // point can reach at z_max under the default intrinsics.
  manifest.norm_x_half =
      config.z_max * std::max(config.intrinsics.cx, config.intrinsics.width - 1.0 - config.intrinsics.cx) /
      config.intrinsics.fx;
  manifest.norm_y_half =
      config.z_max * std::max(config.intrinsics.cy, config.intrinsics.height - 1.0 - config.intrinsics.cy) /
      config.intrinsics.fy;
  manifest.intrinsics_defaults = config.intrinsics;
  manifest.sequences = std::move(infos);
  manifest.config_echo = generate_config_echo(config).dump();

  std::ofstream os(out_dir / "manifest.json");
  if (!os) throw std::runtime_error("generate_dataset: cannot open " + (out_dir / "manifest.json").string());
  os << manifest.to_json();
  if (!os) throw std::runtime_error("generate_dataset: write failed for " + (out_dir / "manifest.json").string());
  return manifest;
}

DatasetReader::DatasetReader(const std::filesystem::path& dir) : dir_(dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw std::runtime_error("dataset: cannot open " + (dir / "manifest.json").string());
  std::stringstream ss;
  ss << is.rdbuf();
  manifest_ = DatasetManifest::from_json(ss.str());
}

std::vector<int> DatasetReader::split_sequences(Split split) const {
  const int n = sequence_count();
  const int n_test = static_cast<int>(std::lround(0.2 * n));
  const int n_train_all = n - n_test;
  const int n_val = n_train_all >= 4 ? std::max(1, static_cast<int>(std::lround(0.1 * n_train_all))) : 0;
  std::vector<int> out;
  switch (split) {
    case Split::train:
      for (int i = 0; i < n_train_all - n_val; ++i) out.push_back(i);
      break;
    case Split::val:
      for (int i = n_train_all - n_val; i < n_train_all; ++i) out.push_back(i);
      break;
    case Split::test:
      for (int i = n_train_all; i < n; ++i) out.push_back(i);
      break;
    case Split::all:
      for (int i = 0; i < n; ++i) out.push_back(i);
      break;
  }
  return out;
}

SequenceData DatasetReader::load_sequence(int k, bool with_depth) const {
  if (k < 0 || k >= sequence_count()) throw std::invalid_argument("dataset: sequence index out of range");
  const SequenceInfo& info = manifest_.sequences[k];
  SequenceData seq;
  seq.index = k;
  seq.name = info.name;
  seq.intrinsics = info.intrinsics;

  const std::filesystem::path seq_dir = dir_ / info.name;
  std::ifstream is(seq_dir / "poses.json");
  if (!is) throw std::runtime_error("dataset: cannot open " + (seq_dir / "poses.json").string());
  json poses_json;
  try {
    poses_json = json::parse(is);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("dataset: parse error in " + (seq_dir / "poses.json").string() + " at byte " +
                             std::to_string(e.byte));
  }
  seq.poses.reserve(poses_json.size());
  for (const auto& rec : poses_json) {
    Pose3D pose(manifest_.joint_count);
    pose.timestamp = rec.at("timestamp_s");
    const auto& joints = rec.at("joints");
    const auto& valid = rec.at("valid");
    for (int j = 0; j < manifest_.joint_count; ++j) {
      pose.joints[j] = {joints[j][0], joints[j][1], joints[j][2]};
      pose.valid[j] = valid[j].get<bool>() ? 1 : 0;
    }
    seq.poses.push_back(std::move(pose));
  }

  if (with_depth) {
    seq.depth.resize(seq.poses.size());
    for (size_t i = 0; i < seq.poses.size(); ++i) {
      char fname[32];
      std::snprintf(fname, sizeof(fname), "depth_%06zu.dpt", i);
      seq.depth[i] = read_dpt(seq_dir / fname);
      seq.depth[i].set_timestamp(seq.poses[i].timestamp);
    }
  }
  return seq;
}

namespace {

int past_frame_step(double fps, double past_rate_hz) {
  const double step = fps / past_rate_hz;
  const int istep = static_cast<int>(std::lround(step));
  if (std::abs(step - istep) > 1e-9 || istep < 1)
    throw std::invalid_argument("window: fps must be an integer multiple of past_rate");
  return istep;
}

}  // namespace

std::vector<int> valid_window_frames(int n_frames, double fps, const SampleWindowSpec& w) {
  int first = 0;
  if (w.past_count > 0) first = w.past_count * past_frame_step(fps, w.past_rate_hz);
  int last = n_frames - 1;
  for (double off : w.future_offsets_s) last = std::min(last, n_frames - 1 - static_cast<int>(std::lround(off * fps)));
  std::vector<int> frames;
  for (int i = first; i <= last; ++i) frames.push_back(i);
  return frames;
}

DatasetSample make_sample(const SequenceData& seq, int frame, double fps, const SampleWindowSpec& w) {
  DatasetSample s;
  s.sequence_index = seq.index;
  s.frame_index = frame;
  s.intrinsics = seq.intrinsics;
  if (!seq.depth.empty()) s.depth = seq.depth[frame];
  s.current = seq.poses[frame];
  if (w.past_count > 0) {
    const int step = past_frame_step(fps, w.past_rate_hz);
    s.past.rate_hz = w.past_rate_hz;
    for (int m = w.past_count; m >= 1; --m) s.past.poses.push_back(seq.poses[frame - m * step]);
  }
  s.future_offsets_s = w.future_offsets_s;
  for (double off : w.future_offsets_s)
    s.future.push_back(seq.poses[frame + static_cast<int>(std::lround(off * fps))]);
  return s;
}

SampleStream::SampleStream(const DatasetReader& reader, Split split, const SampleWindowSpec& w)
    : reader_(&reader), window_(w), fps_(reader.manifest().fps), sequences_(reader.split_sequences(split)) {
  frames_per_seq_.reserve(sequences_.size());
  for (int k : sequences_) {
    frames_per_seq_.push_back(
        valid_window_frames(reader.manifest().sequences[k].n_frames, fps_, window_));
    total_ += static_cast<long>(frames_per_seq_.back().size());
  }
}

bool SampleStream::next(DatasetSample& out) {
  while (seq_pos_ < sequences_.size()) {
    const auto& frames = frames_per_seq_[seq_pos_];
    if (frame_pos_ >= frames.size()) {
      ++seq_pos_;
      frame_pos_ = 0;
      current_.reset();
      continue;
    }
    if (!current_) current_ = reader_->load_sequence(sequences_[seq_pos_]);
    out = make_sample(*current_, frames[frame_pos_], fps_, window_);
    ++frame_pos_;
    return true;
  }
  return false;
}

void SampleStream::reset() {
  seq_pos_ = 0;
  frame_pos_ = 0;
  current_.reset();
}

double in_frustum_fraction(const SequenceData& seq, double z_min, double z_max) {
  return frustum_fraction(seq.poses, seq.intrinsics, z_min, z_max);
}

}  // namespace nowcast
