#include "nowcast/config.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace nowcast {

using nlohmann::json;

void ModelConfig::validate() const {
  if (input_height % 16 != 0 || input_width % 16 != 0)
    throw std::invalid_argument("model config: input dims must be divisible by 16");
  if (past_count < 1 || future_count < 1 || joint_count < 1)
    throw std::invalid_argument("model config: M, T and J must be >= 1");
  if (backbone_channels < 4 || motion_embed_dim < 1 || recurrent_hidden < 1 || motion_channels < 1 ||
      motion_out_channels < 1)
    throw std::invalid_argument("model config: channel sizes must be positive");
  if (est_head_stride != 1)
    throw std::invalid_argument("model config: the estimation head emits full-resolution maps (stride 1)");
  if (forecast_head_stride != 4)
    throw std::invalid_argument("model config: the forecasting head emits quarter-resolution maps (stride 4)");
  if (!(z_min < z_max)) throw std::invalid_argument("model config: z_min must be below z_max");
  if (!(sigma_uv > 0.0) || !(sigma_uz > 0.0)) throw std::invalid_argument("model config: sigma must be positive");
  if (!(norm_x_half > 0.0) || !(norm_y_half > 0.0))
    throw std::invalid_argument("model config: normalization half-extents must be positive");
}

HeatmapSpec ModelConfig::est_spec() const {
  return HeatmapSpec::for_input(input_height, input_width, est_head_stride, sigma_uv, sigma_uz, z_min, z_max);
}

HeatmapSpec ModelConfig::forecast_spec() const {
  const double s_uv = forecast_sigma > 0.0 ? forecast_sigma : sigma_uv;
  const double s_uz = forecast_sigma > 0.0 ? forecast_sigma : sigma_uz;
  return HeatmapSpec::for_input(input_height, input_width, forecast_head_stride, s_uv, s_uz, z_min, z_max);
}

std::string ModelConfig::to_json() const {
  return json{{"input_height", input_height},
              {"input_width", input_width},
              {"backbone_channels", backbone_channels},
              {"motion_embed_dim", motion_embed_dim},
              {"recurrent_hidden", recurrent_hidden},
              {"motion_channels", motion_channels},
              {"motion_out_channels", motion_out_channels},
              {"past_count", past_count},
              {"future_count", future_count},
              {"joint_count", joint_count},
              {"est_head_stride", est_head_stride},
              {"forecast_head_stride", forecast_head_stride},
              {"sigma_uv", sigma_uv},
              {"sigma_uz", sigma_uz},
              {"forecast_sigma", forecast_sigma},
              {"z_min", z_min},
              {"z_max", z_max},
              {"norm_x_half", norm_x_half},
              {"norm_y_half", norm_y_half}}
      .dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  ModelConfig c;
  const auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key);
  };
  get("input_height", c.input_height);
  get("input_width", c.input_width);
  get("backbone_channels", c.backbone_channels);
  get("motion_embed_dim", c.motion_embed_dim);
  get("recurrent_hidden", c.recurrent_hidden);
  get("motion_channels", c.motion_channels);
  get("motion_out_channels", c.motion_out_channels);
  get("past_count", c.past_count);
  get("future_count", c.future_count);
  get("joint_count", c.joint_count);
  get("est_head_stride", c.est_head_stride);
  get("forecast_head_stride", c.forecast_head_stride);
  get("sigma_uv", c.sigma_uv);
  get("sigma_uz", c.sigma_uz);
  get("forecast_sigma", c.forecast_sigma);
  get("z_min", c.z_min);
  get("z_max", c.z_max);
  get("norm_x_half", c.norm_x_half);
  get("norm_y_half", c.norm_y_half);
  return c;
}

std::string generate_config_to_json(const GenerateConfig& c) {
  return json{{"n_sequences", c.n_sequences},
              {"duration_s", c.duration_s},
              {"fps", c.fps},
              {"z_min", c.z_min},
              {"z_max", c.z_max},
              {"past_rate_hz", c.past_rate_hz},
              {"future_offsets_s", c.future_offsets_s},
              {"background_z", c.background_z},
              {"intrinsics_jitter", c.intrinsics_jitter},
              {"base_distance_min", c.base_distance_min},
              {"base_distance_max", c.base_distance_max},
              {"base_lateral_jitter", c.base_lateral_jitter},
              {"base_vertical_jitter", c.base_vertical_jitter},
              {"base_yaw_range", c.base_yaw_range},
              {"base_pitch_range", c.base_pitch_range},
              {"base_roll_range", c.base_roll_range},
              {"intrinsics",
               {{"fx", c.intrinsics.fx},
                {"fy", c.intrinsics.fy},
                {"cx", c.intrinsics.cx},
                {"cy", c.intrinsics.cy},
                {"width", c.intrinsics.width},
                {"height", c.intrinsics.height}}},
              {"trajectory",
               {{"n_waypoints", c.trajectory.n_waypoints},
                {"waypoint_hold_s", c.trajectory.waypoint_hold_s},
                {"segment_duration_min_s", c.trajectory.segment_duration_min_s},
                {"segment_duration_max_s", c.trajectory.segment_duration_max_s}}},
              {"arm",
               {{"link_lengths", c.arm.link_lengths}, {"link_radius", c.arm.link_radius}}}}
      .dump();
}

GenerateConfig generate_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  GenerateConfig c;
  const auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key);
  };
  get("n_sequences", c.n_sequences);
  get("duration_s", c.duration_s);
  get("fps", c.fps);
  get("z_min", c.z_min);
  get("z_max", c.z_max);
  get("past_rate_hz", c.past_rate_hz);
  get("background_z", c.background_z);
  get("intrinsics_jitter", c.intrinsics_jitter);
  get("base_distance_min", c.base_distance_min);
  get("base_distance_max", c.base_distance_max);
  get("base_lateral_jitter", c.base_lateral_jitter);
  get("base_vertical_jitter", c.base_vertical_jitter);
  get("base_yaw_range", c.base_yaw_range);
  get("base_pitch_range", c.base_pitch_range);
  get("base_roll_range", c.base_roll_range);
  if (j.contains("future_offsets_s")) c.future_offsets_s = j.at("future_offsets_s").get<std::vector<double>>();
  if (j.contains("intrinsics")) {
    const json& k = j.at("intrinsics");
    c.intrinsics.fx = k.value("fx", c.intrinsics.fx);
    c.intrinsics.fy = k.value("fy", c.intrinsics.fy);
    c.intrinsics.cx = k.value("cx", c.intrinsics.cx);
    c.intrinsics.cy = k.value("cy", c.intrinsics.cy);
    c.intrinsics.width = k.value("width", c.intrinsics.width);
    c.intrinsics.height = k.value("height", c.intrinsics.height);
  }
  if (j.contains("trajectory")) {
    const json& t = j.at("trajectory");
    c.trajectory.n_waypoints = t.value("n_waypoints", c.trajectory.n_waypoints);
    c.trajectory.waypoint_hold_s = t.value("waypoint_hold_s", c.trajectory.waypoint_hold_s);
    c.trajectory.segment_duration_min_s = t.value("segment_duration_min_s", c.trajectory.segment_duration_min_s);
    c.trajectory.segment_duration_max_s = t.value("segment_duration_max_s", c.trajectory.segment_duration_max_s);
  }
  if (j.contains("arm")) {
    const json& a = j.at("arm");
    if (a.contains("link_lengths")) {
      const auto lengths = a.at("link_lengths").get<std::vector<double>>();
      if (lengths.size() != c.arm.link_lengths.size())
        throw std::invalid_argument("config: custom link counts require the full arm description");
      c.arm.link_lengths = lengths;
    }
    if (a.contains("link_radius")) c.arm.link_radius = a.at("link_radius");
  }
  return c;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (sim.intrinsics.width != model.input_width || sim.intrinsics.height != model.input_height)
    throw std::invalid_argument("config: simulator resolution must match the model input");
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return from_json(ss.str());
}

RunConfig RunConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  RunConfig c;
  if (j.contains("profile")) c = profile(j.at("profile").get<std::string>());
  if (j.contains("model")) {
    // Merge over the profile/default model config.
    json merged = json::parse(c.model.to_json());
    merged.update(j.at("model"));
    c.model = ModelConfig::from_json(merged.dump());
  }
  if (j.contains("train")) {
    json merged = json::parse(c.train.to_json());
    merged.update(j.at("train"), /*merge_objects=*/true);
    c.train = TrainConfig::from_json(merged.dump());
  }
  if (j.contains("sim")) {
    json merged = json::parse(generate_config_to_json(c.sim));
    merged.update(j.at("sim"), /*merge_objects=*/true);
    c.sim = generate_config_from_json(merged.dump());
  }
  if (j.contains("data")) c.data_dir = j.at("data");
  if (j.contains("out")) c.out_dir = j.at("out");
  if (j.contains("seed")) c.seed = j.at("seed");
  return c;
}

std::string RunConfig::to_json() const {
  return json{{"model", json::parse(model.to_json())},
              {"train", json::parse(train.to_json())},
              {"sim", json::parse(generate_config_to_json(sim))},
              {"data", data_dir},
              {"out", out_dir},
              {"seed", seed}}
      .dump(2);
}

RunConfig RunConfig::profile(const std::string& name) {
  RunConfig c;
  if (name == "desk") {
    // Defaults already describe the desk profile: 96x128 input, C_vis 64.
  } else if (name == "compact") {
    c.model.input_height = 48;
    c.model.input_width = 64;
    c.model.backbone_channels = 32;
    c.model.motion_embed_dim = 64;
    c.model.recurrent_hidden = 128;
    c.model.motion_channels = 8;
    c.model.motion_out_channels = 32;
    c.model.z_min = 0.6;
    c.model.z_max = 2.6;
    c.sim.intrinsics = CameraIntrinsics{55.0, 55.0, 32.0, 24.0, 64, 48};
    c.sim.z_min = 0.6;
    c.sim.z_max = 2.6;
  } else {
    throw std::invalid_argument("config: unknown profile '" + name + "'");
  }
  return c;
}

namespace {

std::string svg_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += ch;
    }
  }
  return out;
}

}  // namespace

std::string map_horizon_svg(const std::vector<std::pair<std::string, const MetricsReport*>>& reports,
                            double threshold_cm) {
  const int width = 520, height = 340, ml = 60, mr = 20, mt = 30, mb = 50;
  const double plot_w = width - ml - mr, plot_h = height - mt - mb;
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};

  double max_offset = 0.0;
  for (const auto& [label, report] : reports)
    for (const auto& [offset, summary] : report->per_horizon) max_offset = std::max(max_offset, offset);
  if (max_offset <= 0.0) max_offset = 1.0;

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">mAP@" << threshold_cm
     << "cm vs forecast horizon</text>\n";
  // Axes.
  os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + plot_h
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << mt + plot_h << "\" x2=\"" << ml + plot_w << "\" y2=\"" << mt + plot_h
     << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double frac = i / 5.0;
    const double y = mt + plot_h * (1.0 - frac);
    os << "<text x=\"" << ml - 8 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << frac * 100
       << "%</text>\n";
    os << "<line x1=\"" << ml - 4 << "\" y1=\"" << y << "\" x2=\"" << ml << "\" y2=\"" << y
       << "\" stroke=\"black\"/>\n";
  }
  os << "<text x=\"" << ml + plot_w / 2 << "\" y=\"" << height - 12
     << "\" text-anchor=\"middle\" font-size=\"12\">horizon (s)</text>\n";

  int ci = 0;
  for (const auto& [label, report] : reports) {
    const char* color = kColors[ci % 4];
    std::ostringstream pts;
    for (const auto& [offset, summary] : report->per_horizon) {
      const auto it = summary.map_at.find(threshold_cm);
      if (it == summary.map_at.end()) continue;
      const double x = ml + plot_w * (offset / max_offset);
      const double y = mt + plot_h * (1.0 - it->second);
      pts << x << "," << y << " ";
      os << "<text x=\"" << x << "\" y=\"" << mt + plot_h + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
         << offset << "</text>\n";
    }
    os << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << ml + 10 << "\" y=\"" << mt + 16 + 16 * ci << "\" font-size=\"12\" fill=\"" << color
       << "\">" << svg_escape(label) << "</text>\n";
    ++ci;
  }
  os << "</svg>\n";
  return os.str();
}

NetworkOutput infer(NowcastModel<float>& model, const DepthFrame& depth, const CameraIntrinsics& K,
                    const PoseSequence& past, bool run_forecast) {
  const ModelConfig& cfg = model.config();
  const XYZImage img = depth_to_xyz(depth, K);
  const nn::Tensor<float> xyz = xyz_to_input<float>(img, cfg);
  const nn::Tensor<float> past_t = poses_to_input<float>(past, cfg);
  auto out = model.forward(xyz, past_t, /*train=*/false, run_forecast);
  NetworkOutput result;
  result.current = est_tensor_to_maps(out.est, 0, cfg);
  if (run_forecast) result.future = fut_tensor_to_maps(out.fut, 0, cfg);
  return result;
}

}  // namespace nowcast
