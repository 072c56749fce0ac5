#pragma once

#include "nowcast/augment.hpp"
#include "nowcast/checkpoint.hpp"
#include "nowcast/dataset.hpp"
#include "nowcast/metrics.hpp"
#include "nowcast/model.hpp"

#include <deque>
#include <filesystem>
#include <string>

namespace nowcast {

struct TrainConfig {
  int epochs = 30;
  double lr = 1e-3;
  double lr_decay_factor = 0.1;  // applied at 50% and 75% of training
  int batch_size = 16;
  std::uint64_t seed = 0;
  double teacher_forcing_jitter_sigma_m = 0.01;  // Gaussian jitter on GT past poses
  double w_rpe = 1.0;
  double w_rpf = 1.0;
  AugmentParams augment;
  // Profile knobs: cap the training pool and/or force a step count per epoch
  // (0 keeps full passes). Used by the smoke and overfit profiles.
  int max_train_samples = 0;
  int steps_per_epoch = 0;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

/// Step schedule: lr * decay^(epoch >= ceil(E/2)) * decay^(epoch >= ceil(3E/4)).
double lr_at_epoch(const TrainConfig& cfg, int epoch);

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path best_checkpoint;
  std::filesystem::path metrics_log;
  double best_val_add_cm = 0.0;
  double final_train_loss = 0.0;
  double first_train_loss = 0.0;
};

/// Teacher-forced mini-batch training with per-sample augmentation and the
/// step learning-rate schedule; writes final and best checkpoints (atomic
/// renames) plus an NDJSON metrics log. Deterministic in the seed.
TrainResult train_model(ModelConfig model_cfg, const TrainConfig& train_cfg,
                        const std::filesystem::path& dataset_dir, const std::filesystem::path& out_dir);

enum class EvalMode { gt_past, autoregressive };

/// Anything that can turn a sample into SPDH map stacks. The production
/// implementation wraps the network; tests inject oracles.
class MapSource {
public:
  virtual ~MapSource() = default;
  virtual const ModelConfig& config() const = 0;
  virtual void produce(const DatasetSample& sample, SPDHMaps* est, std::vector<SPDHMaps>* fut) = 0;
};

class ModelMapSource : public MapSource {
public:
  explicit ModelMapSource(NowcastModel<float>& model, bool run_forecast = true)
      : model_(&model), run_forecast_(run_forecast) {}
  const ModelConfig& config() const override { return model_->config(); }
  void produce(const DatasetSample& sample, SPDHMaps* est, std::vector<SPDHMaps>* fut) override;

private:
  NowcastModel<float>* model_;
  bool run_forecast_;
};

/// Ring buffer of the last M decoded poses at past_rate, plus the warmup
/// flag that clears once M * (fps / past_rate) frames have been consumed.
struct RolloutState {
  std::deque<Pose3D> buffer;
  int frame_counter = 0;
  bool warmup = true;
  int subsample = 3;  // frames between buffer pushes (fps / past_rate)
  int past_count = 10;

  /// Past input for the next forward: buffer entries oldest-first, padded by
  /// replicating the earliest available estimate (scene-center pose when the
  /// buffer is still empty).
  PoseSequence padded_past(const ModelConfig& cfg, double past_rate_hz) const;
};

struct RolloutStep {
  Pose3D current;
  std::vector<Pose3D> future;
  bool warmup = false;
};

/// Autoregressive driver: forward with the buffer, decode, push the estimate
/// back at the subsampled rate.
class RolloutRunner {
public:
  RolloutRunner(MapSource& source, const CameraIntrinsics& K, double fps, double past_rate_hz);
  RolloutStep step(const DepthFrame& frame);
  const RolloutState& state() const { return state_; }

private:
  MapSource* source_;
  CameraIntrinsics intrinsics_;
  double past_rate_hz_;
  RolloutState state_;
};

/// gt_past evaluation over an explicit sample list (also used for the
/// validation pass during training).
MetricsReport evaluate_samples(MapSource& source, const std::vector<DatasetSample>& samples,
                               const std::vector<std::string>& joint_names);

/// The two evaluation protocols over a dataset's test split.
MetricsReport evaluate_source(MapSource& source, const DatasetReader& reader, EvalMode mode);

/// Loads the checkpoint and evaluates its test split. Throws
/// std::invalid_argument on a dataset/checkpoint mismatch.
MetricsReport evaluate_checkpoint(const std::filesystem::path& checkpoint,
                                  const std::filesystem::path& dataset_dir, EvalMode mode);

}  // namespace nowcast
