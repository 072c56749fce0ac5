#include "nowcast/train.hpp"

#include "nowcast/losses.hpp"
#include "nowcast/nn/adam.hpp"
#include "nowcast/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace nowcast {

using nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1) throw std::invalid_argument("train config: epochs and batch_size must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("train config: lr must be positive");
  if (!(lr_decay_factor > 0.0)) throw std::invalid_argument("train config: decay factor must be positive");
  if (w_rpe < 0.0 || w_rpf < 0.0) throw std::invalid_argument("train config: loss weights must be non-negative");
  augment.validate();
}

std::string TrainConfig::to_json() const {
  json aug{{"xy_translation_range", augment.xy_translation_range},
           {"z_translation_range", augment.z_translation_range},
           {"rotation_range_deg", augment.rotation_range_deg},
           {"rotate_about_y", augment.rotate_about_y},
           {"pepper_fraction", augment.pepper_fraction},
           {"dropout_count_min", augment.dropout_count_min},
           {"dropout_count_max", augment.dropout_count_max},
           {"dropout_size_min", augment.dropout_size_min},
           {"dropout_size_max", augment.dropout_size_max}};
  return json{{"epochs", epochs},
              {"lr", lr},
              {"lr_decay_factor", lr_decay_factor},
              {"batch_size", batch_size},
              {"seed", seed},
              {"teacher_forcing_jitter_sigma_m", teacher_forcing_jitter_sigma_m},
              {"w_rpe", w_rpe},
              {"w_rpf", w_rpf},
              {"augment", aug},
              {"max_train_samples", max_train_samples},
              {"steps_per_epoch", steps_per_epoch}}
      .dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  TrainConfig c;
  const auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key);
  };
  get("epochs", c.epochs);
  get("lr", c.lr);
  get("lr_decay_factor", c.lr_decay_factor);
  get("batch_size", c.batch_size);
  get("seed", c.seed);
  get("teacher_forcing_jitter_sigma_m", c.teacher_forcing_jitter_sigma_m);
  get("w_rpe", c.w_rpe);
  get("w_rpf", c.w_rpf);
  get("max_train_samples", c.max_train_samples);
  get("steps_per_epoch", c.steps_per_epoch);
  if (j.contains("augment")) {
    const json& a = j.at("augment");
    const auto geta = [&a](const char* key, auto& field) {
      if (a.contains(key)) field = a.at(key);
    };
    geta("xy_translation_range", c.augment.xy_translation_range);
    geta("z_translation_range", c.augment.z_translation_range);
    geta("rotation_range_deg", c.augment.rotation_range_deg);
    geta("rotate_about_y", c.augment.rotate_about_y);
    geta("pepper_fraction", c.augment.pepper_fraction);
    geta("dropout_count_min", c.augment.dropout_count_min);
    geta("dropout_count_max", c.augment.dropout_count_max);
    geta("dropout_size_min", c.augment.dropout_size_min);
    geta("dropout_size_max", c.augment.dropout_size_max);
  }
  return c;
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  const int m1 = (cfg.epochs + 1) / 2;            // ceil(E/2)
  const int m2 = (3 * cfg.epochs + 3) / 4;        // ceil(3E/4)
  double lr = cfg.lr;
  if (epoch >= m1) lr *= cfg.lr_decay_factor;
  if (epoch >= m2) lr *= cfg.lr_decay_factor;
  return lr;
}

namespace {

/// Joints that left the image or the depth range are unobservable; clear
/// their validity so encoding yields zero maps and metrics skip them.
void sanitize_pose(Pose3D& pose, const CameraIntrinsics& K, double z_min, double z_max) {
  for (int j = 0; j < pose.joint_count(); ++j) {
    if (!pose.joint_valid(j)) continue;
    const Point3& p = pose.joints[j];
    if (!(p.z >= z_min && p.z < z_max)) {
      pose.valid[j] = 0;
      continue;
    }
    const double u = K.fx * p.x / p.z + K.cx;
    const double v = K.fy * p.y / p.z + K.cy;
    if (!(u >= 0.0 && u < K.width && v >= 0.0 && v < K.height)) pose.valid[j] = 0;
  }
}

void copy_maps_to(const SPDHMaps& maps, float* dst) {
  const size_t n = maps.map_size();
  for (int j = 0; j < maps.joint_count; ++j)
    for (size_t p = 0; p < n; ++p) dst[j * n + p] = static_cast<float>(maps.uv_map(j)[p]);
  for (int j = 0; j < maps.joint_count; ++j)
    for (size_t p = 0; p < n; ++p) dst[(maps.joint_count + j) * n + p] = static_cast<float>(maps.uz_map(j)[p]);
}

struct Batch {
  nn::Tensor<float> xyz;
  nn::Tensor<float> past;
  nn::Tensor<float> gt_est;
  nn::Tensor<float> gt_fut;
};

/// Assembles one training batch: augmentation, teacher-forcing jitter and
/// ground-truth heatmap rendering, one derived rng stream per item.
Batch build_batch(const std::vector<DatasetSample>& pool, const std::vector<long>& items,
                  const ModelConfig& mc, const TrainConfig& tc, std::uint64_t item_counter_base,
                  bool training) {
  const int n = static_cast<int>(items.size());
  const HeatmapSpec est_spec = mc.est_spec();
  const HeatmapSpec fut_spec = mc.forecast_spec();
  Batch b;
  b.xyz = nn::Tensor<float>({n, 3, mc.input_height, mc.input_width});
  b.past = nn::Tensor<float>({n, mc.past_count, 3 * mc.joint_count});
  b.gt_est = nn::Tensor<float>({n, 2 * mc.joint_count, est_spec.map_height, est_spec.map_width});
  const bool want_fut = training ? tc.w_rpf > 0.0 : true;
  if (want_fut)
    b.gt_fut = nn::Tensor<float>({n, mc.future_count * 2 * mc.joint_count, fut_spec.map_height, fut_spec.map_width});

  parallel_for(n, [&](long begin, long end) {
    for (long slot = begin; slot < end; ++slot) {
      Rng rng = Rng::derive(tc.seed ^ 0xa7c9f3b1ULL, item_counter_base + static_cast<std::uint64_t>(slot));
      DatasetSample sample = pool[items[slot]];
      if (training) {
        AugmentParams aug = tc.augment;
        aug.frustum_z_min = mc.z_min;
        aug.frustum_z_max = mc.z_max;
        for (int attempt = 0; attempt < 20; ++attempt) {
          AugmentResult res = augment_sample(sample, aug, rng);
          if (!res.rejected) {
            sample = std::move(res.sample);
            break;
          }
        }
      }
      sanitize_pose(sample.current, sample.intrinsics, mc.z_min, mc.z_max);
      for (auto& f : sample.future) sanitize_pose(f, sample.intrinsics, mc.z_min, mc.z_max);

      const XYZImage img = depth_to_xyz(sample.depth, sample.intrinsics);
      nn::Tensor<float> xyz = xyz_to_input<float>(img, mc);
      std::copy_n(xyz.ptr(), xyz.numel(), b.xyz.ptr() + slot * xyz.numel());

      PoseSequence past = sample.past;
      if (training && tc.teacher_forcing_jitter_sigma_m > 0.0) {
        for (auto& pose : past.poses)
          for (auto& joint : pose.joints) {
            joint.x += rng.normal(0.0, tc.teacher_forcing_jitter_sigma_m);
            joint.y += rng.normal(0.0, tc.teacher_forcing_jitter_sigma_m);
            joint.z += rng.normal(0.0, tc.teacher_forcing_jitter_sigma_m);
          }
      }
      nn::Tensor<float> past_t = poses_to_input<float>(past, mc);
      std::copy_n(past_t.ptr(), past_t.numel(), b.past.ptr() + slot * past_t.numel());

      const SPDHMaps est = encode_pose(sample.current, sample.intrinsics, est_spec);
      copy_maps_to(est, b.gt_est.ptr() + slot * 2 * mc.joint_count * static_cast<long>(est.map_size()));
      if (want_fut) {
        const long step_sz = 2L * mc.joint_count * fut_spec.map_height * fut_spec.map_width;
        for (int k = 0; k < mc.future_count; ++k) {
          const SPDHMaps fut = encode_pose(sample.future[k], sample.intrinsics, fut_spec);
          copy_maps_to(fut, b.gt_fut.ptr() + slot * mc.future_count * step_sz + k * step_sz);
        }
      }
    }
  });
  return b;
}

std::vector<DatasetSample> collect_samples(const DatasetReader& reader, Split split, const SampleWindowSpec& w,
                                           int cap) {
  std::vector<DatasetSample> out;
  SampleStream stream(reader, split, w);
  DatasetSample s;
  while (stream.next(s)) {
    out.push_back(std::move(s));
    if (cap > 0 && static_cast<int>(out.size()) >= cap) break;
    s = DatasetSample();
  }
  return out;
}

}  // namespace

void ModelMapSource::produce(const DatasetSample& sample, SPDHMaps* est, std::vector<SPDHMaps>* fut) {
  const ModelConfig& mc = model_->config();
  const XYZImage img = depth_to_xyz(sample.depth, sample.intrinsics);
  const nn::Tensor<float> xyz = xyz_to_input<float>(img, mc);
  const nn::Tensor<float> past = poses_to_input<float>(sample.past, mc);
  auto out = model_->forward(xyz, past, /*train=*/false, /*run_forecast=*/run_forecast_);
  if (est) *est = est_tensor_to_maps(out.est, 0, mc);
  if (fut && run_forecast_) *fut = fut_tensor_to_maps(out.fut, 0, mc);
}

PoseSequence RolloutState::padded_past(const ModelConfig& cfg, double past_rate_hz) const {
  PoseSequence seq;
  seq.rate_hz = past_rate_hz;
  Pose3D fill;
  if (buffer.empty()) {
    fill = Pose3D(cfg.joint_count);  // scene-center neutral pose
    for (auto& j : fill.joints) j = {0.0, 0.0, 0.5 * (cfg.z_min + cfg.z_max)};
  } else {
    fill = buffer.front();
  }
  const int missing = cfg.past_count - static_cast<int>(buffer.size());
  for (int i = 0; i < missing; ++i) {
    Pose3D replica = fill;
    replica.timestamp = fill.timestamp - (missing - i) / past_rate_hz;
    seq.poses.push_back(std::move(replica));
  }
  for (const auto& p : buffer) seq.poses.push_back(p);
  return seq;
}

RolloutRunner::RolloutRunner(MapSource& source, const CameraIntrinsics& K, double fps, double past_rate_hz)
    : source_(&source), intrinsics_(K), past_rate_hz_(past_rate_hz) {
  const double step = fps / past_rate_hz;
  const int istep = static_cast<int>(std::lround(step));
  if (std::abs(step - istep) > 1e-9 || istep < 1)
    throw std::invalid_argument("rollout: fps must be an integer multiple of past_rate");
  state_.subsample = istep;
  state_.past_count = source.config().past_count;
}

RolloutStep RolloutRunner::step(const DepthFrame& frame) {
  const ModelConfig& mc = source_->config();
  DatasetSample sample;
  sample.depth = frame;
  sample.intrinsics = intrinsics_;
  sample.past = state_.padded_past(mc, past_rate_hz_);

  SPDHMaps est;
  std::vector<SPDHMaps> fut;
  source_->produce(sample, &est, &fut);

  RolloutStep out;
  out.current = decode_maps(est, intrinsics_);
  out.current.timestamp = frame.timestamp();
  for (const auto& maps : fut) out.future.push_back(decode_maps(maps, intrinsics_));
  out.warmup = state_.warmup;

  if (state_.frame_counter % state_.subsample == 0) {
    state_.buffer.push_back(out.current);
    while (static_cast<int>(state_.buffer.size()) > state_.past_count) state_.buffer.pop_front();
  }
  ++state_.frame_counter;
  state_.warmup = state_.frame_counter < state_.past_count * state_.subsample;
  return out;
}

namespace {

MetricsReport finalize_report(MetricsAccumulator& acc, EvalMode mode) {
  MetricsReport r = acc.report();
  r.mode = mode == EvalMode::gt_past ? "gt_past" : "autoregressive";
  return r;
}

}  // namespace

MetricsReport evaluate_samples(MapSource& source, const std::vector<DatasetSample>& samples,
                               const std::vector<std::string>& joint_names) {
  std::vector<double> offsets = samples.empty() ? std::vector<double>{} : samples.front().future_offsets_s;
  MetricsAccumulator acc(offsets, joint_names);
  for (const auto& s : samples) {
    SPDHMaps est;
    std::vector<SPDHMaps> fut;
    source.produce(s, &est, &fut);
    acc.add(0.0, decode_maps(est, s.intrinsics), s.current);
    for (size_t k = 0; k < fut.size() && k < s.future.size(); ++k)
      acc.add(s.future_offsets_s[k], decode_maps(fut[k], s.intrinsics), s.future[k]);
  }
  return finalize_report(acc, EvalMode::gt_past);
}

MetricsReport evaluate_source(MapSource& source, const DatasetReader& reader, EvalMode mode) {
  const ModelConfig& mc = source.config();
  const DatasetManifest& manifest = reader.manifest();
  if (manifest.joint_count != mc.joint_count)
    throw std::invalid_argument("evaluate: dataset joint count does not match the model");
  SampleWindowSpec window{mc.past_count, manifest.past_rate_hz, manifest.future_offsets_s};

  MetricsAccumulator acc(manifest.future_offsets_s, manifest.joint_names);
  if (mode == EvalMode::gt_past) {
    SampleStream stream(reader, Split::test, window);
    DatasetSample s;
    while (stream.next(s)) {
      SPDHMaps est;
      std::vector<SPDHMaps> fut;
      source.produce(s, &est, &fut);
      acc.add(0.0, decode_maps(est, s.intrinsics), s.current);
      for (size_t k = 0; k < fut.size() && k < s.future.size(); ++k)
        acc.add(manifest.future_offsets_s[k], decode_maps(fut[k], s.intrinsics), s.future[k]);
    }
  } else {
    for (int k : reader.split_sequences(Split::test)) {
      const SequenceData seq = reader.load_sequence(k);
      const std::vector<int> eval_frames =
          valid_window_frames(static_cast<int>(seq.poses.size()), manifest.fps, window);
      const std::vector<char> is_eval = [&] {
        std::vector<char> mask(seq.poses.size(), 0);
        for (int f : eval_frames) mask[f] = 1;
        return mask;
      }();
      RolloutRunner runner(source, seq.intrinsics, manifest.fps, manifest.past_rate_hz);
      for (size_t i = 0; i < seq.depth.size(); ++i) {
        const RolloutStep step = runner.step(seq.depth[i]);
        if (!is_eval[i]) continue;
        acc.add(0.0, step.current, seq.poses[i]);
        for (size_t h = 0; h < step.future.size() && h < manifest.future_offsets_s.size(); ++h) {
          const int fidx = static_cast<int>(i) +
                           static_cast<int>(std::lround(manifest.future_offsets_s[h] * manifest.fps));
          acc.add(manifest.future_offsets_s[h], step.future[h], seq.poses[fidx]);
        }
      }
    }
  }
  return finalize_report(acc, mode);
}

MetricsReport evaluate_checkpoint(const std::filesystem::path& checkpoint,
                                  const std::filesystem::path& dataset_dir, EvalMode mode) {
  LoadedCheckpoint loaded = load_checkpoint(checkpoint);
  DatasetReader reader(dataset_dir);
  ModelMapSource source(*loaded.model);
  MetricsReport report = evaluate_source(source, reader, mode);
  json prov{{"checkpoint", checkpoint.string()},
            {"dataset", dataset_dir.string()},
            {"dataset_seed", reader.manifest().seed},
            {"model_config", json::parse(loaded.config.to_json())},
            {"train_seed", loaded.seed}};
  if (!loaded.extra_json.empty()) prov["train_config"] = json::parse(loaded.extra_json);
  report.provenance = prov.dump();
  return report;
}

TrainResult train_model(ModelConfig model_cfg, const TrainConfig& train_cfg,
                        const std::filesystem::path& dataset_dir, const std::filesystem::path& out_dir) {
  train_cfg.validate();
  DatasetReader reader(dataset_dir);
  const DatasetManifest& manifest = reader.manifest();
  if (manifest.joint_count != model_cfg.joint_count)
    throw std::invalid_argument("train: dataset joint count " + std::to_string(manifest.joint_count) +
                                " does not match model J=" + std::to_string(model_cfg.joint_count));
  if (manifest.intrinsics_defaults.width != model_cfg.input_width ||
      manifest.intrinsics_defaults.height != model_cfg.input_height)
    throw std::invalid_argument("train: dataset resolution does not match the model input");
  if (static_cast<int>(manifest.future_offsets_s.size()) != model_cfg.future_count)
    throw std::invalid_argument("train: dataset future offsets do not match model T");
  model_cfg.z_min = manifest.z_min;
  model_cfg.z_max = manifest.z_max;
  model_cfg.norm_x_half = manifest.norm_x_half;
  model_cfg.norm_y_half = manifest.norm_y_half;
  model_cfg.validate();

  const SampleWindowSpec window{model_cfg.past_count, manifest.past_rate_hz, manifest.future_offsets_s};
  std::vector<DatasetSample> train_pool =
      collect_samples(reader, Split::train, window, train_cfg.max_train_samples);
  if (train_pool.empty()) throw std::invalid_argument("train: no training samples (sequences too short?)");
  std::vector<DatasetSample> val_pool = collect_samples(reader, Split::val, window, 0);

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("train: cannot create " + out_dir.string());
  std::ofstream log(out_dir / "metrics.ndjson", std::ios::trunc);
  if (!log) throw std::runtime_error("train: cannot open " + (out_dir / "metrics.ndjson").string());

  NowcastModel<float> model(model_cfg, train_cfg.seed);
  nn::Adam<float> adam(model.params());

  const long n = static_cast<long>(train_pool.size());
  const int batch = std::min<long>(train_cfg.batch_size, n);
  const int steps_per_epoch =
      train_cfg.steps_per_epoch > 0 ? train_cfg.steps_per_epoch : static_cast<int>((n + batch - 1) / batch);
  const bool run_forecast = train_cfg.w_rpf > 0.0;

  TrainResult result;
  result.final_checkpoint = out_dir / "final.nwck";
  result.best_checkpoint = out_dir / "best.nwck";
  result.metrics_log = out_dir / "metrics.ndjson";
  double best_val_add = std::numeric_limits<double>::infinity();
  bool have_best = false;
  std::uint64_t item_counter = 0;
  const auto t0 = std::chrono::steady_clock::now();
  const auto wall_s = [&t0] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  const std::string extra = train_cfg.to_json();

  for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(train_cfg, epoch);
    std::vector<long> order(n);
    for (long i = 0; i < n; ++i) order[i] = i;
    Rng shuffle_rng = Rng::derive(train_cfg.seed ^ 0x5e0d1ceULL, static_cast<std::uint64_t>(epoch));
    for (long i = n - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.uniform_index(static_cast<std::uint64_t>(i + 1))]);

    double epoch_rpe = 0.0, epoch_rpf = 0.0;
    for (int step = 0; step < steps_per_epoch; ++step) {
      std::vector<long> items(batch);
      for (int i = 0; i < batch; ++i) items[i] = order[(static_cast<long>(step) * batch + i) % n];
      Batch b = build_batch(train_pool, items, model_cfg, train_cfg, item_counter, /*training=*/true);
      item_counter += batch;

      auto out = model.forward(b.xyz, b.past, /*train=*/true, run_forecast);
      const double rpe = loss_rpe(out.est, b.gt_est);
      const double rpf = run_forecast ? loss_rpf(out.fut, b.gt_fut, model_cfg.future_count) : 0.0;
      if (!std::isfinite(rpe) || !std::isfinite(rpf))
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                 std::to_string(step) + " (rpe=" + std::to_string(rpe) +
                                 ", rpf=" + std::to_string(rpf) + ")");
      epoch_rpe += rpe;
      epoch_rpf += rpf;
      if (epoch == 0 && step == 0) result.first_train_loss = total_loss(rpe, rpf, train_cfg.w_rpe, train_cfg.w_rpf);
      result.final_train_loss = total_loss(rpe, rpf, train_cfg.w_rpe, train_cfg.w_rpf);

      model.zero_grad();
      nn::Tensor<float> d_est = loss_rpe_grad(out.est, b.gt_est, train_cfg.w_rpe);
      nn::Tensor<float> d_fut;
      if (run_forecast) d_fut = loss_rpf_grad(out.fut, b.gt_fut, model_cfg.future_count, train_cfg.w_rpf);
      model.backward(d_est, d_fut);
      adam.step(lr);
    }

    log << json{{"epoch", epoch},
                {"split", "train"},
                {"loss_rpe", epoch_rpe / steps_per_epoch},
                {"loss_rpf", epoch_rpf / steps_per_epoch},
                {"lr", lr},
                {"wall_s", wall_s()}}
               .dump()
        << "\n";

    if (!val_pool.empty()) {
      // Validation loss (inference-mode normalization) plus decoded ADD for
      // best-checkpoint selection. Past poses are clean ground truth here.
      double val_rpe = 0.0, val_rpf = 0.0;
      int val_steps = 0;
      std::vector<Pose3D> preds, gts;
      for (long base = 0; base < static_cast<long>(val_pool.size()); base += batch) {
        std::vector<long> items;
        for (long i = base; i < std::min<long>(base + batch, val_pool.size()); ++i) items.push_back(i);
        Batch b = build_batch(val_pool, items, model_cfg, train_cfg, 0, /*training=*/false);
        auto out = model.forward(b.xyz, b.past, /*train=*/false, /*run_forecast=*/true);
        val_rpe += loss_rpe(out.est, b.gt_est);
        val_rpf += loss_rpf(out.fut, b.gt_fut, model_cfg.future_count);
        ++val_steps;
        for (size_t i = 0; i < items.size(); ++i) {
          preds.push_back(decode_maps(est_tensor_to_maps(out.est, i, model_cfg), val_pool[items[i]].intrinsics));
          gts.push_back(val_pool[items[i]].current);
        }
      }
      double val_add = std::numeric_limits<double>::quiet_NaN();
      try {
        val_add = add_metric(preds, gts).first;
      } catch (const std::invalid_argument&) {
        // No jointly-valid joints yet; keep NaN and skip best tracking.
      }
      log << json{{"epoch", epoch},
                  {"split", "val"},
                  {"loss_rpe", val_rpe / val_steps},
                  {"loss_rpf", val_rpf / val_steps},
                  {"val_add_cm", val_add},
                  {"lr", lr},
                  {"wall_s", wall_s()}}
                 .dump()
          << "\n";
      if (std::isfinite(val_add) && val_add < best_val_add) {
        best_val_add = val_add;
        have_best = true;
        save_checkpoint(result.best_checkpoint, model, train_cfg.seed, extra);
      }
    }
  }

  save_checkpoint(result.final_checkpoint, model, train_cfg.seed, extra);
  if (!have_best) {
    save_checkpoint(result.best_checkpoint, model, train_cfg.seed, extra);
    best_val_add = std::numeric_limits<double>::quiet_NaN();
  }
  result.best_val_add_cm = best_val_add;
  log.flush();
  return result;
}

}  // namespace nowcast
