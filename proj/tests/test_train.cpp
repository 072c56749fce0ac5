#include "nowcast/config.hpp"
#include "nowcast/losses.hpp"
#include "nowcast/train.hpp"

#include <doctest.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>

using namespace nowcast;
using nn::Tensor;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("nowcast_train_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ModelConfig micro_model() {
  ModelConfig c;
  c.input_height = 32;
  c.input_width = 48;
  c.backbone_channels = 8;
  c.motion_embed_dim = 16;
  c.recurrent_hidden = 32;
  c.motion_channels = 4;
  c.motion_out_channels = 8;
  c.past_count = 10;
  c.future_count = 4;
  c.joint_count = 5;
  return c;
}

GenerateConfig micro_sim() {
  GenerateConfig c;
  c.intrinsics = {40.0, 40.0, 24.0, 16.0, 48, 32};
  c.z_min = 0.6;
  c.z_max = 2.6;
  c.base_distance_min = 1.35;
  c.base_distance_max = 1.70;
  c.n_sequences = 1;
  c.duration_s = 4.0;
  return c;
}

/// Oracle map source: ignores the input and emits the ground-truth encoding.
/// Used to pin the evaluation floor at the codec quantization error.
class GtOracleSource : public MapSource {
public:
  explicit GtOracleSource(const ModelConfig& cfg) : cfg_(cfg) {}
  const ModelConfig& config() const override { return cfg_; }
  void produce(const DatasetSample& s, SPDHMaps* est, std::vector<SPDHMaps>* fut) override {
    Pose3D cur = s.current;
    sanitize(cur, s.intrinsics);
    if (est) *est = encode_pose(cur, s.intrinsics, cfg_.est_spec());
    if (fut) {
      fut->clear();
      for (const auto& pose : s.future) {
        Pose3D f = pose;
        sanitize(f, s.intrinsics);
        fut->push_back(encode_pose(f, s.intrinsics, cfg_.forecast_spec()));
      }
    }
  }

private:
  void sanitize(Pose3D& pose, const CameraIntrinsics& K) const {
    for (int j = 0; j < pose.joint_count(); ++j) {
      const Point3& p = pose.joints[j];
      if (!(p.z >= cfg_.z_min && p.z < cfg_.z_max)) {
        pose.valid[j] = 0;
        continue;
      }
      const auto [u, v] = project_point(p, K);
      if (!(u >= 0 && u < K.width && v >= 0 && v < K.height)) pose.valid[j] = 0;
    }
  }
  ModelConfig cfg_;
};

}  // namespace

TEST_SUITE("train") {

TEST_CASE("loss_rpe basics") {
  Tensor<float> a({1, 2, 3, 4});
  CHECK(loss_rpe(a, a) == 0.0);
  Tensor<float> ones({1, 2, 3, 4});
  ones.fill(1.0f);
  Tensor<float> zeros({1, 2, 3, 4});
  CHECK(loss_rpe(ones, zeros) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(loss_rpe(ones, zeros) == loss_rpe(zeros, ones));
  Tensor<float> bad({1, 2, 3, 5});
  CHECK_THROWS_AS(loss_rpe(a, bad), std::invalid_argument);
}

TEST_CASE("loss_rpf averages per-step losses") {
  const int T = 4;
  Tensor<float> pred({2, T * 4, 3, 3});
  Tensor<float> gt({2, T * 4, 3, 3});
  // Perturb only step 0 channels.
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 4; ++c)
      for (int p = 0; p < 9; ++p) pred[(n * T * 4 + c) * 9 + p] = 0.5f;
  const double full = loss_rpf(pred, gt, T);
  // Step 0 alone as an rpe loss over [2, 4, 3, 3].
  Tensor<float> s0p({2, 4, 3, 3}), s0g({2, 4, 3, 3});
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 4; ++c)
      for (int p = 0; p < 9; ++p) s0p[(n * 4 + c) * 9 + p] = pred[(n * T * 4 + c) * 9 + p];
  CHECK(full == doctest::Approx(loss_rpe(s0p, s0g) / T).epsilon(1e-12));
  CHECK(loss_rpf(gt, gt, T) == 0.0);
}

TEST_CASE("total loss decomposition is exact") {
  const double rpe = 0.5, rpf = 0.25;
  CHECK(total_loss(rpe, rpf, 1, 1) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(total_loss(rpe, rpf, 1, 0) + total_loss(rpe, rpf, 0, 1) ==
        doctest::Approx(total_loss(rpe, rpf, 1, 1)).epsilon(1e-12));
}

TEST_CASE("learning-rate schedule") {
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.lr = 1e-3;
  CHECK(lr_at_epoch(cfg, 0) == doctest::Approx(1e-3));
  CHECK(lr_at_epoch(cfg, 14) == doctest::Approx(1e-3));
  CHECK(lr_at_epoch(cfg, 15) == doctest::Approx(1e-4));
  CHECK(lr_at_epoch(cfg, 20) == doctest::Approx(1e-4));
  CHECK(lr_at_epoch(cfg, 23) == doctest::Approx(1e-5));
  CHECK(lr_at_epoch(cfg, 29) == doctest::Approx(1e-5));
}

TEST_CASE("smoke training reduces the loss and logs metrics") {
  const fs::path data = temp_dir("smoke_data");
  const fs::path out = temp_dir("smoke_out");
  generate_dataset(micro_sim(), 21, data);

  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 8;
  tc.steps_per_epoch = 25;
  tc.max_train_samples = 16;
  tc.seed = 5;
  tc.augment = AugmentParams::disabled();
  const TrainResult result = train_model(micro_model(), tc, data, out);
  CHECK(result.final_train_loss < result.first_train_loss);
  CHECK(fs::exists(result.final_checkpoint));
  CHECK(fs::exists(result.best_checkpoint));

  std::ifstream log(result.metrics_log);
  REQUIRE(log.good());
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    const auto rec = nlohmann::json::parse(line);
    CHECK(rec.contains("epoch"));
    CHECK(rec.contains("split"));
    CHECK(rec.contains("loss_rpe"));
    CHECK(rec.contains("loss_rpf"));
    CHECK(rec.contains("lr"));
    CHECK(rec.contains("wall_s"));
    ++lines;
  }
  CHECK(lines >= tc.epochs);
  fs::remove_all(data);
  fs::remove_all(out);
}

TEST_CASE("no-forecasting training logs zero rpf") {
  const fs::path data = temp_dir("nofc_data");
  const fs::path out = temp_dir("nofc_out");
  generate_dataset(micro_sim(), 22, data);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 4;
  tc.steps_per_epoch = 3;
  tc.max_train_samples = 8;
  tc.w_rpf = 0.0;
  tc.augment = AugmentParams::disabled();
  train_model(micro_model(), tc, data, out);
  std::ifstream log(out / "metrics.ndjson");
  std::string line;
  while (std::getline(log, line)) {
    const auto rec = nlohmann::json::parse(line);
    if (rec.at("split") == "train") CHECK(rec.at("loss_rpf").get<double>() == 0.0);
  }
  fs::remove_all(data);
  fs::remove_all(out);
}

TEST_CASE("checkpoints reload to identical evaluation") {
  const fs::path data = temp_dir("ckpt_data");
  const fs::path out = temp_dir("ckpt_out");
  generate_dataset(micro_sim(), 23, data);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 4;
  tc.steps_per_epoch = 5;
  tc.max_train_samples = 8;
  tc.augment = AugmentParams::disabled();
  const TrainResult result = train_model(micro_model(), tc, data, out);

  LoadedCheckpoint a = load_checkpoint(result.final_checkpoint);
  LoadedCheckpoint b = load_checkpoint(result.final_checkpoint);
  const auto ra = a.model->state_refs();
  const auto rb = b.model->state_refs();
  REQUIRE(ra.size() == rb.size());
  for (size_t i = 0; i < ra.size(); ++i) CHECK(ra[i].value->data == rb[i].value->data);
  CHECK(a.seed == tc.seed);
  CHECK_FALSE(a.extra_json.empty());
  fs::remove_all(data);
  fs::remove_all(out);
}

TEST_CASE("training is deterministic given the seed") {
  const fs::path data = temp_dir("det_data");
  generate_dataset(micro_sim(), 24, data);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 4;
  tc.steps_per_epoch = 4;
  tc.max_train_samples = 8;
  tc.seed = 77;
  const fs::path out1 = temp_dir("det_out1");
  const fs::path out2 = temp_dir("det_out2");
  train_model(micro_model(), tc, data, out1);
  train_model(micro_model(), tc, data, out2);
  LoadedCheckpoint a = load_checkpoint(out1 / "final.nwck");
  LoadedCheckpoint b = load_checkpoint(out2 / "final.nwck");
  const auto ra = a.model->state_refs();
  const auto rb = b.model->state_refs();
  for (size_t i = 0; i < ra.size(); ++i) CHECK(ra[i].value->data == rb[i].value->data);
  fs::remove_all(data);
  fs::remove_all(out1);
  fs::remove_all(out2);
}

TEST_CASE("rollout warmup clears after M * (fps / past_rate) frames") {
  const fs::path data = temp_dir("rollout_data");
  generate_dataset(micro_sim(), 25, data);
  DatasetReader reader(data);
  const SequenceData seq = reader.load_sequence(0);
  ModelConfig mc = micro_model();
  mc.z_min = reader.manifest().z_min;
  mc.z_max = reader.manifest().z_max;
  GtOracleSource oracle(mc);

  // The oracle needs GT poses, so drive the runner manually with samples.
  RolloutRunner runner(oracle, seq.intrinsics, 30.0, 10.0);
  CHECK(runner.state().warmup);
  for (int i = 0; i < 30; ++i) {
    DepthFrame frame = seq.depth[i];
    // produce() reads only current/future GT via the oracle; rollout supplies
    // the buffer-driven past. Current GT is irrelevant to warmup arithmetic.
    CHECK(runner.state().warmup == (i < 30));
    runner.step(frame);
  }
  CHECK_FALSE(runner.state().warmup);
  CHECK(runner.state().buffer.size() == 10);
  // Buffer timestamps at strict 0.1 s spacing.
  for (size_t i = 1; i < runner.state().buffer.size(); ++i)
    CHECK(runner.state().buffer[i].timestamp - runner.state().buffer[i - 1].timestamp ==
          doctest::Approx(0.1).epsilon(1e-9));
  fs::remove_all(data);
}

TEST_CASE("gt-oracle evaluation sits at the codec quantization floor") {
  const fs::path data = temp_dir("oracle_data");
  GenerateConfig sim = micro_sim();
  sim.n_sequences = 5;  // one test sequence after the 80/20 split
  generate_dataset(sim, 26, data);
  DatasetReader reader(data);
  ModelConfig mc = micro_model();
  mc.z_min = reader.manifest().z_min;
  mc.z_max = reader.manifest().z_max;
  mc.norm_x_half = reader.manifest().norm_x_half;
  mc.norm_y_half = reader.manifest().norm_y_half;
  GtOracleSource oracle(mc);
  const MetricsReport report = evaluate_source(oracle, reader, EvalMode::gt_past);
  const double bound_cm = 100.0 * codec_error_bound(mc.est_spec(), reader.manifest().intrinsics_defaults);
  CHECK(report.current.add_mean_cm > 0.0);
  CHECK(report.current.add_mean_cm <= bound_cm);
  // Future horizons decode at stride 4: a coarser floor, still bounded.
  const double fut_bound_cm = 100.0 * codec_error_bound(mc.forecast_spec(), reader.manifest().intrinsics_defaults);
  for (const auto& [offset, summary] : report.per_horizon)
    if (offset > 0.0) CHECK(summary.add_mean_cm <= fut_bound_cm);

  // Determinism: the same evaluation twice is bit-identical.
  GtOracleSource oracle2(mc);
  const MetricsReport again = evaluate_source(oracle2, reader, EvalMode::gt_past);
  CHECK(again.to_json() == report.to_json());
  fs::remove_all(data);
}

TEST_CASE("train rejects mismatched datasets") {
  const fs::path data = temp_dir("mismatch_data");
  generate_dataset(micro_sim(), 27, data);
  ModelConfig wrong = micro_model();
  wrong.input_width = 64;  // dataset is 48 wide
  TrainConfig tc;
  tc.epochs = 1;
  CHECK_THROWS_AS(train_model(wrong, tc, data, temp_dir("mismatch_out")), std::invalid_argument);
  fs::remove_all(data);
}

TEST_CASE("train config json round trip") {
  TrainConfig tc;
  tc.epochs = 7;
  tc.w_rpf = 0.0;
  tc.augment.pepper_fraction = 0.1;
  const TrainConfig back = TrainConfig::from_json(tc.to_json());
  CHECK(back.epochs == 7);
  CHECK(back.w_rpf == 0.0);
  CHECK(back.augment.pepper_fraction == doctest::Approx(0.1));
}

}  // TEST_SUITE
