#include "nowcast/metrics.hpp"

#include <json.hpp>

#include <sstream>

namespace nowcast {

using nlohmann::json;

namespace {

json summary_to_json(const MetricsSummary& s) {
  json map_at = json::object();
  for (const auto& [t, f] : s.map_at) {
    std::ostringstream key;
    key << t;
    map_at[key.str()] = f;
  }
  return json{{"add_mean_cm", s.add_mean_cm},
              {"add_std_cm", s.add_std_cm},
              {"map_at", map_at},
              {"n_frames", s.n_frames},
              {"n_joints_evaluated", s.n_joints_evaluated}};
}

MetricsSummary summary_from_json(const json& j) {
  MetricsSummary s;
  s.add_mean_cm = j.at("add_mean_cm");
  s.add_std_cm = j.at("add_std_cm");
  for (const auto& [key, value] : j.at("map_at").items()) s.map_at[std::stod(key)] = value;
  s.n_frames = j.at("n_frames");
  s.n_joints_evaluated = j.at("n_joints_evaluated");
  return s;
}

std::string horizon_key(double offset) {
  std::ostringstream os;
  os << offset;
  return os.str();
}

}  // namespace

std::string MetricsReport::to_json() const {
  json horizons = json::object();
  for (const auto& [offset, summary] : per_horizon) horizons[horizon_key(offset)] = summary_to_json(summary);
  json joints = json::object();
  for (const auto& [name, summary] : per_joint) joints[name] = summary_to_json(summary);
  json j{{"mode", mode},
         {"current", summary_to_json(current)},
         {"per_horizon", horizons},
         {"per_joint", joints}};
  if (!provenance.empty()) j["provenance"] = json::parse(provenance);
  return j.dump(2) + "\n";
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  const json j = json::parse(text);
  MetricsReport r;
  r.mode = j.at("mode");
  r.current = summary_from_json(j.at("current"));
  for (const auto& [key, value] : j.at("per_horizon").items()) r.per_horizon[std::stod(key)] = summary_from_json(value);
  for (const auto& [key, value] : j.at("per_joint").items()) r.per_joint[key] = summary_from_json(value);
  if (j.contains("provenance")) r.provenance = j.at("provenance").dump();
  return r;
}

namespace {

void csv_summary_row(std::ostringstream& os, const MetricsSummary& s) {
  os << s.add_mean_cm << "," << s.add_std_cm;
  for (const auto& [t, f] : s.map_at) {
    (void)t;
    os << "," << f;
  }
  os << "," << s.n_frames << "," << s.n_joints_evaluated << "\n";
}

std::string csv_header(const MetricsSummary& s, const std::string& first_col) {
  std::ostringstream os;
  os << first_col << ",add_mean_cm,add_std_cm";
  for (const auto& [t, f] : s.map_at) {
    (void)f;
    os << ",map_at_" << t << "cm";
  }
  os << ",n_frames,n_joints_evaluated\n";
  return os.str();
}

}  // namespace

std::string MetricsReport::per_horizon_csv() const {
  std::ostringstream os;
  os << csv_header(current, "horizon_s");
  for (const auto& [offset, summary] : per_horizon) {
    os << offset << ",";
    csv_summary_row(os, summary);
  }
  return os.str();
}

std::string MetricsReport::per_joint_csv() const {
  std::ostringstream os;
  os << csv_header(current, "joint");
  for (const auto& [name, summary] : per_joint) {
    os << name << ",";
    csv_summary_row(os, summary);
  }
  return os.str();
}

}  // namespace nowcast
