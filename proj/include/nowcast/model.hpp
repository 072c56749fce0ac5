#pragma once

#include "nowcast/dataset.hpp"
#include "nowcast/nn/layers.hpp"
#include "nowcast/spdh.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace nowcast {

/// Network shape and decoding parameters. The estimation head always emits
/// full-resolution maps (two x2 upsamplings from the 1/4-scale fusion point)
/// and the forecasting head emits 1/4-resolution maps, so the stride fields
/// are fixed contracts rather than free knobs.
struct ModelConfig {
  int input_height = 96;
  int input_width = 128;
  int backbone_channels = 64;    // visual feature channels at 1/4 scale
  int motion_embed_dim = 128;    // per-pose embedding
  int recurrent_hidden = 256;    // GRU hidden size
  int motion_channels = 16;      // motion map channels at 1/16 scale
  int motion_out_channels = 32;  // motion map channels at 1/4 scale
  int past_count = 10;           // M
  int future_count = 4;          // T
  int joint_count = 5;           // J
  int est_head_stride = 1;
  int forecast_head_stride = 4;
  double sigma_uv = 2.0;
  double sigma_uz = 2.0;
  // Rendering sigma for the quarter-resolution forecast maps; 0 inherits
  // sigma_uv/sigma_uz. Small maps need tighter peaks to stay informative.
  double forecast_sigma = 0.0;
  double z_min = 0.5;
  double z_max = 4.5;
  double norm_x_half = 2.62;  // scene half-extents for input normalization,
  double norm_y_half = 1.97;  // overwritten from the dataset manifest

  void validate() const;
  HeatmapSpec est_spec() const;
  HeatmapSpec forecast_spec() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

/// Normalized network input built from an XYZ image: x and y scaled by the
/// scene half-extents, z mapped to [-1, 1] over the configured depth range;
/// invalid pixels stay zero on all three channels.
template <typename T>
nn::Tensor<T> xyz_to_input(const XYZImage& img, const ModelConfig& cfg) {
  nn::Tensor<T> t({1, 3, img.height(), img.width()});
  const long plane = static_cast<long>(img.height()) * img.width();
  const double zc = 0.5 * (cfg.z_min + cfg.z_max), zh = 0.5 * (cfg.z_max - cfg.z_min);
  long i = 0;
  for (int v = 0; v < img.height(); ++v) {
    for (int u = 0; u < img.width(); ++u, ++i) {
      if (!img.valid(v, u)) continue;
      const Point3 p = img.at(v, u);
      t[i] = static_cast<T>(p.x / cfg.norm_x_half);
      t[plane + i] = static_cast<T>(p.y / cfg.norm_y_half);
      t[2 * plane + i] = static_cast<T>((p.z - zc) / zh);
    }
  }
  return t;
}

/// Past poses flattened to [1, M, 3J] under the same normalization.
template <typename T>
nn::Tensor<T> poses_to_input(const PoseSequence& past, const ModelConfig& cfg) {
  if (past.size() != cfg.past_count) throw std::invalid_argument("model: past pose count != M");
  nn::Tensor<T> t({1, cfg.past_count, 3 * cfg.joint_count});
  const double zc = 0.5 * (cfg.z_min + cfg.z_max), zh = 0.5 * (cfg.z_max - cfg.z_min);
  long i = 0;
  for (const Pose3D& pose : past.poses) {
    if (pose.joint_count() != cfg.joint_count) throw std::invalid_argument("model: past pose joint count != J");
    for (const Point3& p : pose.joints) {
      t[i++] = static_cast<T>(p.x / cfg.norm_x_half);
      t[i++] = static_cast<T>(p.y / cfg.norm_y_half);
      t[i++] = static_cast<T>((p.z - zc) / zh);
    }
  }
  return t;
}

/// The nowcasting network: a stride-4 visual encoder over the XYZ image, a
/// GRU motion encoder over M past poses upsampled to the same grid,
/// channel-wise fusion, a full-resolution pose-estimation head and a
/// quarter-resolution pose-forecasting head.
/// Default visual backbone: a four-stage residual encoder with a
/// high-resolution skip, total stride 4, emitting the configured channel
/// count. A replacement must keep this contract: [N, 3, H, W] in,
/// [N, C_vis, H/4, W/4] out, with forward/backward/params/buffers.
template <typename T>
class ResidualBackbone {
public:
  ResidualBackbone() = default;
  ResidualBackbone(int channels, Rng& rng) {
    const int c1 = std::max(4, channels / 4);
    const int c2 = std::max(4, channels / 2);
    stem_ = nn::Conv2d<T>("visual.stem.conv", 3, c1, 3, 2, 1, rng);
    stem_bn_ = nn::BatchNorm2d<T>("visual.stem.bn", c1);
    s1a_ = nn::ResBlock<T>("visual.s1a", c1, c1, 1, rng);
    s1b_ = nn::ResBlock<T>("visual.s1b", c1, c1, 1, rng);
    s2a_ = nn::ResBlock<T>("visual.s2a", c1, c2, 2, rng);
    s2b_ = nn::ResBlock<T>("visual.s2b", c2, c2, 1, rng);
    s3a_ = nn::ResBlock<T>("visual.s3a", c2, channels, 1, rng);
    s3b_ = nn::ResBlock<T>("visual.s3b", channels, channels, 1, rng);
    s4a_ = nn::ResBlock<T>("visual.s4a", channels, channels, 1, rng);
    s4b_ = nn::ResBlock<T>("visual.s4b", channels, channels, 1, rng);
    hires_skip_ = nn::Conv2d<T>("visual.hires_skip", c1, channels, 1, 2, 0, rng);
  }

  nn::Tensor<T> forward(const nn::Tensor<T>& xyz, bool train) {
    nn::Tensor<T> h = stem_relu_.forward(stem_bn_.forward(stem_.forward(xyz, train), train), train);
    nn::Tensor<T> hires = hires_skip_.forward(h, train);
    h = s1b_.forward(s1a_.forward(h, train), train);
    h = s2b_.forward(s2a_.forward(h, train), train);
    h = s3b_.forward(s3a_.forward(h, train), train);
    h = s4b_.forward(s4a_.forward(h, train), train);
    for (long i = 0; i < h.numel(); ++i) h[i] += hires[i];
    return out_relu_.forward(h, train);
  }

  nn::Tensor<T> backward(const nn::Tensor<T>& dvis) {
    nn::Tensor<T> dsum = out_relu_.backward(dvis);
    nn::Tensor<T> dh = s4a_.backward(s4b_.backward(dsum));
    dh = s3a_.backward(s3b_.backward(dh));
    dh = s2a_.backward(s2b_.backward(dh));
    dh = s1a_.backward(s1b_.backward(dh));
    nn::Tensor<T> dhires = hires_skip_.backward(dsum);
    for (long i = 0; i < dh.numel(); ++i) dh[i] += dhires[i];
    return stem_.backward(stem_bn_.backward(stem_relu_.backward(dh)));
  }

  std::vector<nn::ParamRef<T>> params() {
    std::vector<nn::ParamRef<T>> out = stem_.params();
    nn::ResBlock<T>::append(out, stem_bn_.params());
    for (auto* b : {&s1a_, &s1b_, &s2a_, &s2b_, &s3a_, &s3b_, &s4a_, &s4b_})
      nn::ResBlock<T>::append(out, b->params());
    nn::ResBlock<T>::append(out, hires_skip_.params());
    return out;
  }
  std::vector<nn::ParamRef<T>> buffers() {
    std::vector<nn::ParamRef<T>> out = stem_bn_.buffers();
    for (auto* b : {&s1a_, &s1b_, &s2a_, &s2b_, &s3a_, &s3b_, &s4a_, &s4b_})
      nn::ResBlock<T>::append(out, b->buffers());
    return out;
  }

private:
  nn::Conv2d<T> stem_;
  nn::BatchNorm2d<T> stem_bn_;
  nn::ReLU<T> stem_relu_, out_relu_;
  nn::ResBlock<T> s1a_, s1b_, s2a_, s2b_, s3a_, s3b_, s4a_, s4b_;
  nn::Conv2d<T> hires_skip_;
};

template <typename T, typename Backbone = ResidualBackbone<T>>
class NowcastModel {
public:
  static constexpr double kHeadInitStd = 1e-3;

  explicit NowcastModel(const ModelConfig& cfg, std::uint64_t init_seed = 0) : cfg_(cfg) {
    cfg.validate();
    Rng rng = Rng::derive(init_seed, 0x6d6f64656cULL);
    const int cv = cfg.backbone_channels;
    backbone_ = Backbone(cv, rng);

    const int grid = (cfg.input_height / 16) * (cfg.input_width / 16);
    embed_ = nn::Linear<T>("motion.embed", 3 * cfg.joint_count, cfg.motion_embed_dim, rng);
    gru_ = nn::GRU<T>("motion.gru", cfg.motion_embed_dim, cfg.recurrent_hidden, rng);
    project_ = nn::Linear<T>("motion.project", cfg.recurrent_hidden, cfg.motion_channels * grid, rng);
    mot_up1_ = nn::UpBlock<T>("motion.up1", cfg.motion_channels, cfg.motion_out_channels, rng);
    mot_up2_ = nn::UpBlock<T>("motion.up2", cfg.motion_out_channels, cfg.motion_out_channels, rng);

    const int cf = cv + cfg.motion_out_channels;
    const int ch = std::max(4, cf / 2);
    const int ce = std::max(4, cf / 4);
    est_up1_ = nn::UpBlock<T>("est.up1", cf, ch, rng);
    est_up2_ = nn::UpBlock<T>("est.up2", ch, ce, rng);
    // Heatmap output convs start near zero so early training fits the sparse
    // targets instead of unlearning amplified initialization noise.
    est_uv_ = nn::Conv2d<T>("est.uv", ce, cfg.joint_count, 1, 1, 0, rng, kHeadInitStd);
    est_uz_ = nn::Conv2d<T>("est.uz", ce, cfg.joint_count, 1, 1, 0, rng, kHeadInitStd);

    fc_conv1_ = nn::Conv2d<T>("forecast.conv1", cf, 32, 3, 1, 1, rng);
    fc_bn_ = nn::BatchNorm2d<T>("forecast.bn", 32);
    fc_conv2_ =
        nn::Conv2d<T>("forecast.conv2", 32, cfg.future_count * 2 * cfg.joint_count, 3, 1, 1, rng, kHeadInitStd);
  }

  const ModelConfig& config() const { return cfg_; }

  /// [N, 3, H, W] -> [N, C_vis, H/4, W/4]
  nn::Tensor<T> visual_encode(const nn::Tensor<T>& xyz, bool train) {
    if (xyz.dim(1) != 3 || xyz.dim(2) != cfg_.input_height || xyz.dim(3) != cfg_.input_width)
      throw std::invalid_argument("visual_encode: input resolution mismatch");
    return backbone_.forward(xyz, train);
  }

  /// [N, M, 3J] -> [N, C_mot', H/4, W/4]
  nn::Tensor<T> motion_encode(const nn::Tensor<T>& past, bool train) {
    if (past.dim(1) != cfg_.past_count || past.dim(2) != 3 * cfg_.joint_count)
      throw std::invalid_argument("motion_encode: sequence shape mismatch");
    const int n = past.dim(0);
    nn::Tensor<T> flat = past;
    flat.reshape({n * cfg_.past_count, 3 * cfg_.joint_count});
    nn::Tensor<T> emb = embed_relu_.forward(embed_.forward(flat, train), train);
    emb.reshape({n, cfg_.past_count, cfg_.motion_embed_dim});
    nn::Tensor<T> h = gru_.forward(emb, train);
    nn::Tensor<T> grid = project_.forward(h, train);
    grid.reshape({n, cfg_.motion_channels, cfg_.input_height / 16, cfg_.input_width / 16});
    return mot_up2_.forward(mot_up1_.forward(grid, train), train);
  }

  /// Channel-wise concatenation, visual first.
  static nn::Tensor<T> fuse(const nn::Tensor<T>& vis, const nn::Tensor<T>& mot) {
    if (vis.dim(0) != mot.dim(0) || vis.dim(2) != mot.dim(2) || vis.dim(3) != mot.dim(3))
      throw std::invalid_argument("fuse: spatial dimensions mismatch");
    const int n = vis.dim(0), cv = vis.dim(1), cm = mot.dim(1), h = vis.dim(2), w = vis.dim(3);
    nn::Tensor<T> out({n, cv + cm, h, w});
    const long plane = static_cast<long>(h) * w;
    for (int i = 0; i < n; ++i) {
      std::copy_n(vis.ptr() + static_cast<long>(i) * cv * plane, cv * plane,
                  out.ptr() + static_cast<long>(i) * (cv + cm) * plane);
      std::copy_n(mot.ptr() + static_cast<long>(i) * cm * plane, cm * plane,
                  out.ptr() + (static_cast<long>(i) * (cv + cm) + cv) * plane);
    }
    return out;
  }

  /// [N, Cf, H/4, W/4] -> [N, 2J, H, W]; uv maps first, then uz.
  nn::Tensor<T> estimate_head(const nn::Tensor<T>& fused, bool train) {
    nn::Tensor<T> h = est_up2_.forward(est_up1_.forward(fused, train), train);
    nn::Tensor<T> uv = est_uv_.forward(h, train);
    nn::Tensor<T> uz = est_uz_.forward(h, train);
    const int n = uv.dim(0), j = cfg_.joint_count;
    const long plane = static_cast<long>(uv.dim(2)) * uv.dim(3);
    nn::Tensor<T> out({n, 2 * j, uv.dim(2), uv.dim(3)});
    for (int i = 0; i < n; ++i) {
      std::copy_n(uv.ptr() + static_cast<long>(i) * j * plane, j * plane,
                  out.ptr() + static_cast<long>(i) * 2 * j * plane);
      std::copy_n(uz.ptr() + static_cast<long>(i) * j * plane, j * plane,
                  out.ptr() + (static_cast<long>(i) * 2 + 1) * j * plane);
    }
    return out;
  }

  /// [N, Cf, H/4, W/4] -> [N, T*2J, H/4, W/4]; per step uv then uz.
  nn::Tensor<T> forecast_head(const nn::Tensor<T>& fused, bool train) {
    nn::Tensor<T> h = fc_relu_.forward(fc_bn_.forward(fc_conv1_.forward(fused, train), train), train);
    return fc_conv2_.forward(h, train);
  }

  struct Output {
    nn::Tensor<T> est;  // [N, 2J, H, W]
    nn::Tensor<T> fut;  // [N, T*2J, H/4, W/4]; empty when the head is skipped
  };

  Output forward(const nn::Tensor<T>& xyz, const nn::Tensor<T>& past, bool train, bool run_forecast = true) {
    nn::Tensor<T> vis = visual_encode(xyz, train);
    nn::Tensor<T> mot = motion_encode(past, train);
    vis_channels_ = vis.dim(1);
    fused_ = fuse(vis, mot);
    Output out;
    out.est = estimate_head(fused_, train);
    if (run_forecast) out.fut = forecast_head(fused_, train);
    return out;
  }

  /// Backward through the whole network; call after a training-mode forward.
  /// An empty d_fut skips the forecasting head.
  void backward(const nn::Tensor<T>& d_est, const nn::Tensor<T>& d_fut) {
    const int n = d_est.dim(0), j = cfg_.joint_count;
    const long plane = static_cast<long>(d_est.dim(2)) * d_est.dim(3);
    nn::Tensor<T> duv({n, j, d_est.dim(2), d_est.dim(3)});
    nn::Tensor<T> duz({n, j, d_est.dim(2), d_est.dim(3)});
    for (int i = 0; i < n; ++i) {
      std::copy_n(d_est.ptr() + static_cast<long>(i) * 2 * j * plane, j * plane,
                  duv.ptr() + static_cast<long>(i) * j * plane);
      std::copy_n(d_est.ptr() + (static_cast<long>(i) * 2 + 1) * j * plane, j * plane,
                  duz.ptr() + static_cast<long>(i) * j * plane);
    }
    nn::Tensor<T> dtrunk = est_uv_.backward(duv);
    nn::Tensor<T> dtrunk_uz = est_uz_.backward(duz);
    for (long i = 0; i < dtrunk.numel(); ++i) dtrunk[i] += dtrunk_uz[i];
    nn::Tensor<T> dfused = est_up1_.backward(est_up2_.backward(dtrunk));

    if (!d_fut.empty()) {
      nn::Tensor<T> dfc = fc_conv1_.backward(fc_bn_.backward(fc_relu_.backward(fc_conv2_.backward(d_fut))));
      for (long i = 0; i < dfused.numel(); ++i) dfused[i] += dfc[i];
    }

    // Split the fused gradient back into the two branches.
    const int cv = vis_channels_, cm = dfused.dim(1) - vis_channels_;
    const long fplane = static_cast<long>(dfused.dim(2)) * dfused.dim(3);
    nn::Tensor<T> dvis({n, cv, dfused.dim(2), dfused.dim(3)});
    nn::Tensor<T> dmot({n, cm, dfused.dim(2), dfused.dim(3)});
    for (int i = 0; i < n; ++i) {
      std::copy_n(dfused.ptr() + static_cast<long>(i) * (cv + cm) * fplane, cv * fplane,
                  dvis.ptr() + static_cast<long>(i) * cv * fplane);
      std::copy_n(dfused.ptr() + (static_cast<long>(i) * (cv + cm) + cv) * fplane, cm * fplane,
                  dmot.ptr() + static_cast<long>(i) * cm * fplane);
    }

    nn::Tensor<T> dgrid = mot_up1_.backward(mot_up2_.backward(dmot));
    dgrid.reshape({n, cfg_.motion_channels * (cfg_.input_height / 16) * (cfg_.input_width / 16)});
    nn::Tensor<T> demb = gru_.backward(project_.backward(dgrid));
    demb.reshape({n * cfg_.past_count, cfg_.motion_embed_dim});
    embed_.backward(embed_relu_.backward(demb));

    backbone_.backward(dvis);
  }

  std::vector<nn::ParamRef<T>> params() {
    std::vector<nn::ParamRef<T>> out;
    const auto add = [&out](std::vector<nn::ParamRef<T>> p) { out.insert(out.end(), p.begin(), p.end()); };
    add(backbone_.params());
    add(embed_.params());
    add(gru_.params());
    add(project_.params());
    add(mot_up1_.params());
    add(mot_up2_.params());
    add(est_up1_.params());
    add(est_up2_.params());
    add(est_uv_.params());
    add(est_uz_.params());
    add(fc_conv1_.params());
    add(fc_bn_.params());
    add(fc_conv2_.params());
    return out;
  }

  std::vector<nn::ParamRef<T>> estimation_head_params() {
    std::vector<nn::ParamRef<T>> out;
    const auto add = [&out](std::vector<nn::ParamRef<T>> p) { out.insert(out.end(), p.begin(), p.end()); };
    add(est_up1_.params());
    add(est_up2_.params());
    add(est_uv_.params());
    add(est_uz_.params());
    return out;
  }
  std::vector<nn::ParamRef<T>> forecast_head_params() {
    std::vector<nn::ParamRef<T>> out;
    const auto add = [&out](std::vector<nn::ParamRef<T>> p) { out.insert(out.end(), p.begin(), p.end()); };
    add(fc_conv1_.params());
    add(fc_bn_.params());
    add(fc_conv2_.params());
    return out;
  }

  /// Learnable parameters plus normalization-layer statistics, for
  /// checkpointing.
  std::vector<nn::ParamRef<T>> state_refs() {
    auto out = params();
    const auto add = [&out](std::vector<nn::ParamRef<T>> p) { out.insert(out.end(), p.begin(), p.end()); };
    add(backbone_.buffers());
    add(mot_up1_.buffers());
    add(mot_up2_.buffers());
    add(est_up1_.buffers());
    add(est_up2_.buffers());
    add(fc_bn_.buffers());
    return out;
  }

  void zero_grad() {
    for (auto& p : params()) p.grad->zero();
  }

private:
  ModelConfig cfg_;
  int vis_channels_ = 0;
  nn::Tensor<T> fused_;

  Backbone backbone_;

  nn::Linear<T> embed_;
  nn::ReLU<T> embed_relu_;
  nn::GRU<T> gru_;
  nn::Linear<T> project_;
  nn::UpBlock<T> mot_up1_, mot_up2_;

  nn::UpBlock<T> est_up1_, est_up2_;
  nn::Conv2d<T> est_uv_, est_uz_;

  nn::Conv2d<T> fc_conv1_;
  nn::BatchNorm2d<T> fc_bn_;
  nn::ReLU<T> fc_relu_;
  nn::Conv2d<T> fc_conv2_;
};

/// Decoded inference result: current maps at full resolution plus T future
/// stacks at 1/4 resolution.
struct NetworkOutput {
  SPDHMaps current;
  std::vector<SPDHMaps> future;
};

/// Converts one sample's float maps into SPDHMaps stacks for decoding.
template <typename T>
SPDHMaps est_tensor_to_maps(const nn::Tensor<T>& est, long batch_index, const ModelConfig& cfg) {
  SPDHMaps maps(cfg.est_spec(), cfg.joint_count);
  const long plane = static_cast<long>(est.dim(2)) * est.dim(3);
  const T* base = est.ptr() + batch_index * 2 * cfg.joint_count * plane;
  for (int j = 0; j < cfg.joint_count; ++j)
    for (long p = 0; p < plane; ++p) {
      maps.uv_map(j)[p] = static_cast<double>(base[j * plane + p]);
      maps.uz_map(j)[p] = static_cast<double>(base[(cfg.joint_count + j) * plane + p]);
    }
  return maps;
}

template <typename T>
std::vector<SPDHMaps> fut_tensor_to_maps(const nn::Tensor<T>& fut, long batch_index, const ModelConfig& cfg) {
  std::vector<SPDHMaps> out;
  const long plane = static_cast<long>(fut.dim(2)) * fut.dim(3);
  const T* base = fut.ptr() + batch_index * cfg.future_count * 2 * cfg.joint_count * plane;
  for (int k = 0; k < cfg.future_count; ++k) {
    SPDHMaps maps(cfg.forecast_spec(), cfg.joint_count);
    const T* step = base + static_cast<long>(k) * 2 * cfg.joint_count * plane;
    for (int j = 0; j < cfg.joint_count; ++j)
      for (long p = 0; p < plane; ++p) {
        maps.uv_map(j)[p] = static_cast<double>(step[j * plane + p]);
        maps.uz_map(j)[p] = static_cast<double>(step[(cfg.joint_count + j) * plane + p]);
      }
    out.push_back(std::move(maps));
  }
  return out;
}

/// depth -> XYZ -> normalize -> both branches -> both heads, inference mode.
NetworkOutput infer(NowcastModel<float>& model, const DepthFrame& depth, const CameraIntrinsics& K,
                    const PoseSequence& past, bool run_forecast = true);

}  // namespace nowcast
