#pragma once

#include "nowcast/nn/tensor.hpp"

#include <stdexcept>

namespace nowcast {

/// Pose-estimation loss: mean over the N*2J maps of the per-map mean squared
/// pixel error between predicted and ground-truth heatmaps.
template <typename T>
double loss_rpe(const nn::Tensor<T>& pred, const nn::Tensor<T>& gt) {
  if (pred.shape != gt.shape) throw std::invalid_argument("loss_rpe: shape mismatch");
  double sum = 0.0;
  for (long i = 0; i < pred.numel(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(gt[i]);
    sum += d * d;
  }
  return sum / pred.numel();
}

/// d loss_rpe / d pred, scaled by `weight`.
template <typename T>
nn::Tensor<T> loss_rpe_grad(const nn::Tensor<T>& pred, const nn::Tensor<T>& gt, double weight) {
  if (pred.shape != gt.shape) throw std::invalid_argument("loss_rpe_grad: shape mismatch");
  nn::Tensor<T> g(pred.shape);
  const double scale = 2.0 * weight / pred.numel();
  for (long i = 0; i < pred.numel(); ++i)
    g[i] = static_cast<T>(scale * (static_cast<double>(pred[i]) - static_cast<double>(gt[i])));
  return g;
}

/// Pose-forecasting loss: mean over the T future steps of the per-step
/// estimation loss. Tensors are [N, T*2J, h, w].
template <typename T>
double loss_rpf(const nn::Tensor<T>& pred, const nn::Tensor<T>& gt, int future_steps) {
  if (pred.shape != gt.shape) throw std::invalid_argument("loss_rpf: shape mismatch");
  if (future_steps <= 0 || pred.dim(1) % future_steps != 0)
    throw std::invalid_argument("loss_rpf: channel count not divisible by T");
  const int n = pred.dim(0);
  const long step_sz = static_cast<long>(pred.dim(1) / future_steps) * pred.dim(2) * pred.dim(3);
  const long sample_sz = step_sz * future_steps;
  double total = 0.0;
  for (int k = 0; k < future_steps; ++k) {
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      const long base = static_cast<long>(i) * sample_sz + k * step_sz;
      for (long p = 0; p < step_sz; ++p) {
        const double d = static_cast<double>(pred[base + p]) - static_cast<double>(gt[base + p]);
        sum += d * d;
      }
    }
    total += sum / (static_cast<double>(n) * step_sz);
  }
  return total / future_steps;
}

template <typename T>
nn::Tensor<T> loss_rpf_grad(const nn::Tensor<T>& pred, const nn::Tensor<T>& gt, int future_steps, double weight) {
  if (pred.shape != gt.shape) throw std::invalid_argument("loss_rpf_grad: shape mismatch");
  nn::Tensor<T> g(pred.shape);
  const long step_sz = static_cast<long>(pred.dim(1) / future_steps) * pred.dim(2) * pred.dim(3);
  const double scale = 2.0 * weight / (static_cast<double>(pred.dim(0)) * future_steps * step_sz);
  for (long i = 0; i < pred.numel(); ++i)
    g[i] = static_cast<T>(scale * (static_cast<double>(pred[i]) - static_cast<double>(gt[i])));
  return g;
}

inline double total_loss(double rpe, double rpf, double w_rpe = 1.0, double w_rpf = 1.0) {
  return w_rpe * rpe + w_rpf * rpf;
}

}  // namespace nowcast
