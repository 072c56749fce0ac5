#pragma once

#include "nowcast/nn/tensor.hpp"

#include <cmath>
#include <vector>

namespace nowcast::nn {

template <typename T>
class Adam {
public:
  explicit Adam(std::vector<ParamRef<T>> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      m_.emplace_back(p.value->shape);
      v_.emplace_back(p.value->shape);
    }
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t i = 0; i < params_.size(); ++i) {
      Tensor<T>& w = *params_[i].value;
      const Tensor<T>& g = *params_[i].grad;
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      for (long j = 0; j < w.numel(); ++j) {
        const double gj = g[j];
        const double mj = beta1_ * m[j] + (1.0 - beta1_) * gj;
        const double vj = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        w[j] -= static_cast<T>(lr * (mj / bc1) / (std::sqrt(vj / bc2) + eps_));
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.grad->zero();
  }

private:
  std::vector<ParamRef<T>> params_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

}  // namespace nowcast::nn
