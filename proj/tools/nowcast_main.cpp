// Command-line entry points for the pose-nowcasting toolkit: dataset
// generation, training, evaluation, streaming prediction and benchmarking.

#include "nowcast/config.hpp"
#include "nowcast/checkpoint.hpp"
#include "nowcast/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace nowcast;
using nlohmann::json;

constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;
constexpr int kExitIo = 4;

RunConfig load_run_config(const std::string& config_path, const std::string& profile) {
  RunConfig cfg = profile.empty() ? RunConfig{} : RunConfig::profile(profile);
  if (!config_path.empty()) {
    RunConfig file_cfg = RunConfig::from_file(config_path);
    cfg = file_cfg;
  }
  return cfg;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string());
  os << text;
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

int cmd_generate(const std::string& config_path, const std::string& profile, const std::string& out,
                 std::uint64_t seed, int sequences, double duration) {
  RunConfig cfg = load_run_config(config_path, profile);
  if (sequences > 0) cfg.sim.n_sequences = sequences;
  if (duration > 0.0) cfg.sim.duration_s = duration;
  cfg.validate();
  const DatasetManifest manifest = generate_dataset(cfg.sim, seed, out);
  std::cout << "generated " << manifest.sequences.size() << " sequences x "
            << (manifest.sequences.empty() ? 0 : manifest.sequences.front().n_frames) << " frames under " << out
            << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& profile, const std::string& data,
              const std::string& out, std::uint64_t seed, bool seed_set, bool no_forecasting) {
  RunConfig cfg = load_run_config(config_path, profile);
  if (seed_set) cfg.train.seed = seed;
  if (no_forecasting) {
    cfg.train.w_rpe = 1.0;
    cfg.train.w_rpf = 0.0;
  }
  cfg.validate();
  const TrainResult result = train_model(cfg.model, cfg.train, data, out);
  std::cout << "final checkpoint: " << result.final_checkpoint.string() << "\n"
            << "best checkpoint:  " << result.best_checkpoint.string() << "\n"
            << "metrics log:      " << result.metrics_log.string() << "\n";
  if (std::isfinite(result.best_val_add_cm)) std::cout << "best val ADD (cm): " << result.best_val_add_cm << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& mode,
             const std::string& report_dir) {
  std::filesystem::create_directories(report_dir);
  std::vector<std::pair<std::string, MetricsReport>> reports;
  if (mode == "gt_past" || mode == "both")
    reports.emplace_back("gt_past", evaluate_checkpoint(checkpoint, data, EvalMode::gt_past));
  if (mode == "autoregressive" || mode == "both")
    reports.emplace_back("autoregressive", evaluate_checkpoint(checkpoint, data, EvalMode::autoregressive));

  std::vector<std::pair<std::string, const MetricsReport*>> chart;
  for (auto& [label, report] : reports) {
    const std::filesystem::path base = std::filesystem::path(report_dir) / ("report_" + label);
    write_text(base.string() + ".json", report.to_json());
    write_text(base.string() + "_per_horizon.csv", report.per_horizon_csv());
    write_text(base.string() + "_per_joint.csv", report.per_joint_csv());
    chart.emplace_back(label, &report);
    std::cout << label << ": ADD " << report.current.add_mean_cm << " +/- " << report.current.add_std_cm
              << " cm over " << report.current.n_frames << " frames\n";
  }
  if (reports.size() == 2) {
    // Per-horizon gap between the autoregressive and ground-truth-past runs.
    std::ostringstream gap;
    gap << "horizon_s,add_gap_cm,map10_gap\n";
    const MetricsReport& gt = reports[0].second;
    const MetricsReport& ar = reports[1].second;
    for (const auto& [offset, summary] : ar.per_horizon) {
      const auto it = gt.per_horizon.find(offset);
      if (it == gt.per_horizon.end()) continue;
      gap << offset << "," << summary.add_mean_cm - it->second.add_mean_cm << ",";
      const auto m_ar = summary.map_at.find(10.0);
      const auto m_gt = it->second.map_at.find(10.0);
      if (m_ar != summary.map_at.end() && m_gt != it->second.map_at.end())
        gap << m_ar->second - m_gt->second;
      gap << "\n";
    }
    write_text(std::filesystem::path(report_dir) / "gt_vs_autoregressive_gap.csv", gap.str());
  }
  write_text(std::filesystem::path(report_dir) / "map_vs_horizon.svg", map_horizon_svg(chart));
  return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& data, int sequence, const std::string& out) {
  LoadedCheckpoint loaded = load_checkpoint(checkpoint);
  DatasetReader reader(data);
  if (reader.manifest().joint_count != loaded.config.joint_count)
    throw std::invalid_argument("predict: dataset joint count does not match the checkpoint");
  const SequenceData seq = reader.load_sequence(sequence);
  ModelMapSource source(*loaded.model);
  RolloutRunner runner(source, seq.intrinsics, reader.manifest().fps, reader.manifest().past_rate_hz);

  std::ofstream os(out);
  if (!os) throw std::runtime_error("predict: cannot open " + out);
  for (size_t i = 0; i < seq.depth.size(); ++i) {
    const RolloutStep step = runner.step(seq.depth[i]);
    json current = json::array();
    for (const auto& p : step.current.joints) current.push_back(json::array({p.x, p.y, p.z}));
    json forecasts = json::array();
    for (const auto& pose : step.future) {
      json jpose = json::array();
      for (const auto& p : pose.joints) jpose.push_back(json::array({p.x, p.y, p.z}));
      forecasts.push_back(jpose);
    }
    os << json{{"frame", i}, {"warmup", step.warmup}, {"current", current}, {"forecasts", forecasts}}.dump()
       << "\n";
  }
  std::cout << "wrote " << seq.depth.size() << " prediction lines to " << out << "\n";
  return 0;
}

int cmd_bench(const std::string& checkpoint, const std::string& data, int frames) {
  LoadedCheckpoint loaded = load_checkpoint(checkpoint);
  DatasetReader reader(data);
  const SequenceData seq = reader.load_sequence(0);
  if (seq.depth.empty()) throw std::runtime_error("bench: dataset has no frames");

  struct ModeResult {
    std::string name;
    double mean_ms, p95_ms;
  };
  std::vector<ModeResult> results;
  for (const bool full : {false, true}) {
    ModelMapSource source(*loaded.model, /*run_forecast=*/full);
    RolloutRunner runner(source, seq.intrinsics, reader.manifest().fps, reader.manifest().past_rate_hz);
    // Warmup passes, then timed frames cycling through the sequence.
    for (int i = 0; i < 3; ++i) runner.step(seq.depth[i % seq.depth.size()]);
    std::vector<double> ms;
    for (int i = 0; i < frames; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      runner.step(seq.depth[i % seq.depth.size()]);
      ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    std::sort(ms.begin(), ms.end());
    double mean = 0.0;
    for (double v : ms) mean += v;
    mean /= ms.size();
    const double p95 = ms[std::min(ms.size() - 1, static_cast<size_t>(0.95 * ms.size()))];
    results.push_back({full ? "full_pipeline" : "estimation_only", mean, p95});
  }
  for (const auto& r : results)
    std::cout << r.name << ": mean " << r.mean_ms << " ms, p95 " << r.p95_ms << " ms, " << 1000.0 / r.mean_ms
              << " FPS\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Depth-based pose nowcasting toolkit"};
  app.require_subcommand(1);

  std::string config_path, profile_name, data, out, mode = "both", checkpoint, report_dir = "reports";
  std::uint64_t seed = 0;
  int sequences = 0, sequence_index = 0, frames = 0;
  double duration = 0.0;
  bool no_forecasting = false;

  auto* generate = app.add_subcommand("generate", "Render a synthetic arm dataset");
  generate->add_option("--config", config_path, "JSON config file");
  generate->add_option("--profile", profile_name, "Built-in profile: desk | compact");
  generate->add_option("--out", out, "Output dataset directory")->required();
  generate->add_option("--seed", seed, "Generation seed");
  generate->add_option("--sequences", sequences, "Sequence count override");
  generate->add_option("--duration", duration, "Per-sequence duration override (s)");

  auto* train = app.add_subcommand("train", "Train the nowcasting network");
  train->add_option("--config", config_path, "JSON config file");
  train->add_option("--profile", profile_name, "Built-in profile: desk | compact");
  train->add_option("--data", data, "Dataset directory")->required();
  train->add_option("--out", out, "Output directory for checkpoints and logs")->required();
  auto* seed_opt = train->add_option("--seed", seed, "Training seed");
  train->add_flag("--no-forecasting", no_forecasting, "Train with loss weights (1, 0)");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  eval->add_option("checkpoint", checkpoint, "Checkpoint path")->required();
  eval->add_option("--data", data, "Dataset directory")->required();
  eval->add_option("--mode", mode, "gt_past | autoregressive | both")
      ->check(CLI::IsMember({"gt_past", "autoregressive", "both"}));
  eval->add_option("--report", report_dir, "Report output directory");

  auto* predict = app.add_subcommand("predict", "Stream one sequence through the rollout");
  predict->add_option("checkpoint", checkpoint, "Checkpoint path")->required();
  predict->add_option("--data", data, "Dataset directory")->required();
  predict->add_option("--sequence", sequence_index, "Sequence index");
  predict->add_option("--out", out, "Output JSONL path")->required();

  auto* bench = app.add_subcommand("bench", "Measure per-frame latency");
  bench->add_option("checkpoint", checkpoint, "Checkpoint path")->required();
  bench->add_option("--data", data, "Dataset directory")->required();
  bench->add_option("--frames", frames, "Timed frame count")->required()->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (generate->parsed()) return cmd_generate(config_path, profile_name, out, seed, sequences, duration);
    if (train->parsed())
      return cmd_train(config_path, profile_name, data, out, seed, seed_opt->count() > 0, no_forecasting);
    if (eval->parsed()) return cmd_eval(checkpoint, data, mode, report_dir);
    if (predict->parsed()) return cmd_predict(checkpoint, data, sequence_index, out);
    if (bench->parsed()) return cmd_bench(checkpoint, data, frames);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return 0;
}
