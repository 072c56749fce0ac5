#pragma once

#include "nowcast/dataset.hpp"
#include "nowcast/model.hpp"
#include "nowcast/train.hpp"

#include <filesystem>
#include <string>

namespace nowcast {

/// Merged run configuration. Values come from built-in defaults, overridden
/// by the JSON config file, overridden by command-line flags.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  GenerateConfig sim;
  std::string data_dir;
  std::string out_dir;
  std::uint64_t seed = 0;

  void validate() const;
  static RunConfig from_file(const std::filesystem::path& path);
  static RunConfig from_json(const std::string& text);
  std::string to_json() const;

  /// Named profiles used throughout the docs and tests: "desk" (default)
  /// and "compact" (reduced resolution for CPU-budget experiments).
  static RunConfig profile(const std::string& name);
};

std::string generate_config_to_json(const GenerateConfig& c);
GenerateConfig generate_config_from_json(const std::string& text);

/// SVG line chart of mAP@threshold vs forecast horizon, one polyline per
/// labelled report.
std::string map_horizon_svg(const std::vector<std::pair<std::string, const MetricsReport*>>& reports,
                            double threshold_cm = 10.0);

}  // namespace nowcast
