#pragma once

#include "nowcast/nn/tensor.hpp"
#include "nowcast/parallel.hpp"
#include "nowcast/rng.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace nowcast::nn {

// All layers cache what their backward pass needs during a training-mode
// forward. Parameter gradients accumulate across backward calls until
// zero_grad. Reductions over the batch run per-sample and are merged in
// sample order, so results are bitwise identical for any worker count.

template <typename T>
void init_normal(Tensor<T>& t, double stddev, Rng& rng) {
  for (auto& v : t.data) v = static_cast<T>(rng.normal(0.0, stddev));
}

/// Orthogonal matrix via QR of a Gaussian draw (computed in double).
template <typename T>
void init_orthogonal(Tensor<T>& t, Rng& rng) {
  const int rows = t.dim(0), cols = t.dim(1);
  Eigen::MatrixXd a(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) a(r, c) = rng.normal();
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ() *
                            Eigen::MatrixXd::Identity(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) t.data[static_cast<long>(r) * cols + c] = static_cast<T>(q(r, c));
}

namespace detail {

/// Gathers k x k patches of src [C, H, W] into cols [C*k*k, Ho*Wo].
template <typename T>
void im2col(const T* src, int c_in, int h, int w, int k, int stride, int pad, int ho, int wo, T* cols) {
  for (int c = 0; c < c_in; ++c) {
    for (int kr = 0; kr < k; ++kr) {
      for (int kc = 0; kc < k; ++kc) {
        T* row = cols + (static_cast<long>(c) * k * k + kr * k + kc) * (static_cast<long>(ho) * wo);
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh * stride - pad + kr;
          if (ih < 0 || ih >= h) {
            for (int ow = 0; ow < wo; ++ow) row[static_cast<long>(oh) * wo + ow] = T(0);
            continue;
          }
          const T* srow = src + (static_cast<long>(c) * h + ih) * w;
          for (int ow = 0; ow < wo; ++ow) {
            const int iw = ow * stride - pad + kc;
            row[static_cast<long>(oh) * wo + ow] = (iw >= 0 && iw < w) ? srow[iw] : T(0);
          }
        }
      }
    }
  }
}

/// Scatter-adds cols [C*k*k, Ho*Wo] back onto dst [C, H, W].
template <typename T>
void col2im_add(const T* cols, int c_in, int h, int w, int k, int stride, int pad, int ho, int wo, T* dst) {
  for (int c = 0; c < c_in; ++c) {
    for (int kr = 0; kr < k; ++kr) {
      for (int kc = 0; kc < k; ++kc) {
        const T* row = cols + (static_cast<long>(c) * k * k + kr * k + kc) * (static_cast<long>(ho) * wo);
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh * stride - pad + kr;
          if (ih < 0 || ih >= h) continue;
          T* drow = dst + (static_cast<long>(c) * h + ih) * w;
          for (int ow = 0; ow < wo; ++ow) {
            const int iw = ow * stride - pad + kc;
            if (iw >= 0 && iw < w) drow[iw] += row[static_cast<long>(oh) * wo + ow];
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename T>
class Conv2d {
public:
  Conv2d() = default;
  /// init_std 0 selects the He default. Output heads pass a small value so
  /// the network starts near the zero map instead of amplified noise.
  Conv2d(std::string name, int in_c, int out_c, int k, int stride, int pad, Rng& rng, double init_std = 0.0)
      : name_(std::move(name)), in_c_(in_c), out_c_(out_c), k_(k), stride_(stride), pad_(pad),
        weight_({out_c, in_c * k * k}), bias_({out_c}), grad_weight_({out_c, in_c * k * k}), grad_bias_({out_c}) {
    init_normal(weight_, init_std > 0.0 ? init_std : std::sqrt(2.0 / (static_cast<double>(in_c) * k * k)), rng);
  }

  int out_height(int h) const { return (h + 2 * pad_ - k_) / stride_ + 1; }
  int out_width(int w) const { return (w + 2 * pad_ - k_) / stride_ + 1; }

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int ho = out_height(h), wo = out_width(w);
    const long patch = static_cast<long>(in_c_) * k_ * k_;
    const long ow_sz = static_cast<long>(ho) * wo;
    cols_ = Tensor<T>({n, static_cast<int>(patch), static_cast<int>(ow_sz)});
    in_h_ = h;
    in_w_ = w;
    Tensor<T> y({n, out_c_, ho, wo});
    parallel_for(n, [&](long b, long e) {
      for (long i = b; i < e; ++i) {
        T* cols = cols_.ptr() + i * patch * ow_sz;
        detail::im2col(x.ptr() + i * in_c_ * static_cast<long>(h) * w, in_c_, h, w, k_, stride_, pad_, ho, wo, cols);
        auto yi = y.mat_at(i * out_c_ * ow_sz, out_c_, ow_sz);
        yi.noalias() = weight_.mat(out_c_, patch) * typename Tensor<T>::CMapT(cols, patch, ow_sz);
        for (int c = 0; c < out_c_; ++c) yi.row(c).array() += bias_[c];
      }
    });
    if (!train) cols_ = Tensor<T>();  // inference keeps no cache
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const int n = dy.dim(0), ho = dy.dim(2), wo = dy.dim(3);
    const long patch = static_cast<long>(in_c_) * k_ * k_;
    const long ow_sz = static_cast<long>(ho) * wo;
    Tensor<T> dx({n, in_c_, in_h_, in_w_});
    Tensor<T> dw_partial({n, out_c_, static_cast<int>(patch)});
    parallel_for(n, [&](long b, long e) {
      for (long i = b; i < e; ++i) {
        auto dyi = dy.mat_at(i * out_c_ * ow_sz, out_c_, ow_sz);
        auto colsi = cols_.mat_at(i * patch * ow_sz, patch, ow_sz);
        dw_partial.mat_at(i * out_c_ * patch, out_c_, patch).noalias() = dyi * colsi.transpose();
        Tensor<T> dcols({static_cast<int>(patch), static_cast<int>(ow_sz)});
        dcols.mat(patch, ow_sz).noalias() = weight_.mat(out_c_, patch).transpose() * dyi;
        detail::col2im_add(dcols.ptr(), in_c_, in_h_, in_w_, k_, stride_, pad_, ho, wo,
                           dx.ptr() + i * in_c_ * static_cast<long>(in_h_) * in_w_);
      }
    });
    // Merge per-sample partials in sample order. The bias reduction is a
    // plain index-order loop: vectorized reductions over mapped memory pick
    // up the allocation alignment and stop being reproducible.
    for (long i = 0; i < n; ++i) {
      grad_weight_.mat(out_c_, patch) += dw_partial.mat_at(i * out_c_ * patch, out_c_, patch);
      const T* dyi = dy.ptr() + i * out_c_ * ow_sz;
      for (int c = 0; c < out_c_; ++c) {
        T s = T(0);
        for (long p = 0; p < ow_sz; ++p) s += dyi[c * ow_sz + p];
        grad_bias_[c] += s;
      }
    }
    return dx;
  }

  std::vector<ParamRef<T>> params() {
    return {{name_ + ".weight", &weight_, &grad_weight_}, {name_ + ".bias", &bias_, &grad_bias_}};
  }

private:
  std::string name_;
  int in_c_ = 0, out_c_ = 0, k_ = 0, stride_ = 1, pad_ = 0;
  int in_h_ = 0, in_w_ = 0;
  Tensor<T> weight_, bias_, grad_weight_, grad_bias_;
  Tensor<T> cols_;
};

template <typename T>
class ConvTranspose2d {
public:
  ConvTranspose2d() = default;
  ConvTranspose2d(std::string name, int in_c, int out_c, int k, int stride, int pad, Rng& rng)
      : name_(std::move(name)), in_c_(in_c), out_c_(out_c), k_(k), stride_(stride), pad_(pad),
        weight_({in_c, out_c * k * k}), bias_({out_c}), grad_weight_({in_c, out_c * k * k}), grad_bias_({out_c}) {
    // Each output pixel receives k^2/stride^2 taps from in_c channels.
    const double fan_in = static_cast<double>(in_c) * k * k / (stride * stride);
    init_normal(weight_, std::sqrt(2.0 / fan_in), rng);
  }

  int out_height(int h) const { return (h - 1) * stride_ - 2 * pad_ + k_; }
  int out_width(int w) const { return (w - 1) * stride_ - 2 * pad_ + k_; }

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int ho = out_height(h), wo = out_width(w);
    const long patch = static_cast<long>(out_c_) * k_ * k_;
    const long in_sz = static_cast<long>(h) * w;
    in_h_ = h;
    in_w_ = w;
    if (train) x_cache_ = x;
    Tensor<T> y({n, out_c_, ho, wo});
    parallel_for(n, [&](long b, long e) {
      for (long i = b; i < e; ++i) {
        Tensor<T> tmp({static_cast<int>(patch), static_cast<int>(in_sz)});
        tmp.mat(patch, in_sz).noalias() =
            weight_.mat(in_c_, patch).transpose() * x.mat_at(i * in_c_ * in_sz, in_c_, in_sz);
        T* yi = y.ptr() + i * out_c_ * static_cast<long>(ho) * wo;
        // The forward scatter is the conv gradient: cols indexed on the
        // *output* grid with the same (k, stride, pad).
        detail::col2im_add(tmp.ptr(), out_c_, ho, wo, k_, stride_, pad_, h, w, yi);
        auto ymat = y.mat_at(i * out_c_ * static_cast<long>(ho) * wo, out_c_, static_cast<long>(ho) * wo);
        for (int c = 0; c < out_c_; ++c) ymat.row(c).array() += bias_[c];
      }
    });
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const int n = dy.dim(0), ho = dy.dim(2), wo = dy.dim(3);
    const long patch = static_cast<long>(out_c_) * k_ * k_;
    const long in_sz = static_cast<long>(in_h_) * in_w_;
    Tensor<T> dx({n, in_c_, in_h_, in_w_});
    Tensor<T> dw_partial({n, in_c_, static_cast<int>(patch)});
    Tensor<T> dcols({static_cast<int>(n), static_cast<int>(patch), static_cast<int>(in_sz)});
    parallel_for(n, [&](long b, long e) {
      for (long i = b; i < e; ++i) {
        T* dc = dcols.ptr() + i * patch * in_sz;
        detail::im2col(dy.ptr() + i * out_c_ * static_cast<long>(ho) * wo, out_c_, ho, wo, k_, stride_, pad_,
                       in_h_, in_w_, dc);
        auto dci = typename Tensor<T>::CMapT(dc, patch, in_sz);
        dx.mat_at(i * in_c_ * in_sz, in_c_, in_sz).noalias() = weight_.mat(in_c_, patch) * dci;
        dw_partial.mat_at(i * in_c_ * patch, in_c_, patch).noalias() =
            x_cache_.mat_at(i * in_c_ * in_sz, in_c_, in_sz) * dci.transpose();
      }
    });
    for (long i = 0; i < n; ++i) {
      grad_weight_.mat(in_c_, patch) += dw_partial.mat_at(i * in_c_ * patch, in_c_, patch);
      const long out_sz = static_cast<long>(ho) * wo;
      const T* dyi = dy.ptr() + i * out_c_ * out_sz;
      for (int c = 0; c < out_c_; ++c) {
        T s = T(0);
        for (long p = 0; p < out_sz; ++p) s += dyi[c * out_sz + p];
        grad_bias_[c] += s;
      }
    }
    return dx;
  }

  std::vector<ParamRef<T>> params() {
    return {{name_ + ".weight", &weight_, &grad_weight_}, {name_ + ".bias", &bias_, &grad_bias_}};
  }

private:
  std::string name_;
  int in_c_ = 0, out_c_ = 0, k_ = 0, stride_ = 1, pad_ = 0;
  int in_h_ = 0, in_w_ = 0;
  Tensor<T> weight_, bias_, grad_weight_, grad_bias_;
  Tensor<T> x_cache_;
};

template <typename T>
class BatchNorm2d {
public:
  BatchNorm2d() = default;
  BatchNorm2d(std::string name, int channels)
      : name_(std::move(name)), c_(channels), gamma_({channels}), beta_({channels}),
        grad_gamma_({channels}), grad_beta_({channels}), running_mean_({channels}), running_var_({channels}) {
    gamma_.fill(T(1));
    running_var_.fill(T(1));
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const long plane = static_cast<long>(h) * w;
    const long count = static_cast<long>(n) * plane;
    Tensor<T> y(x.shape);
    if (train) {
      xhat_ = Tensor<T>(x.shape);
      inv_std_ = Tensor<T>({c_});
      n_ = n;
      h_ = h;
      w_ = w;
    }
    parallel_for(c_, [&](long cb, long ce) {
      for (long c = cb; c < ce; ++c) {
        T mean, inv;
        if (train) {
          double sum = 0.0, sq = 0.0;
          for (int i = 0; i < n; ++i) {
            const T* src = x.ptr() + (static_cast<long>(i) * c_ + c) * plane;
            for (long p = 0; p < plane; ++p) {
              sum += src[p];
              sq += static_cast<double>(src[p]) * src[p];
            }
          }
          const double m = sum / count;
          const double var = sq / count - m * m;
          mean = static_cast<T>(m);
          inv = static_cast<T>(1.0 / std::sqrt(var + kEps));
          inv_std_[c] = inv;
          const double unbiased = count > 1 ? var * count / (count - 1.0) : var;
          running_mean_[c] = static_cast<T>((1.0 - kMomentum) * running_mean_[c] + kMomentum * m);
          running_var_[c] = static_cast<T>((1.0 - kMomentum) * running_var_[c] + kMomentum * unbiased);
        } else {
          mean = running_mean_[c];
          inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var_[c]) + kEps));
        }
        for (int i = 0; i < n; ++i) {
          const T* src = x.ptr() + (static_cast<long>(i) * c_ + c) * plane;
          T* dst = y.ptr() + (static_cast<long>(i) * c_ + c) * plane;
          T* xh = train ? xhat_.ptr() + (static_cast<long>(i) * c_ + c) * plane : nullptr;
          for (long p = 0; p < plane; ++p) {
            const T norm = (src[p] - mean) * inv;
            if (xh) xh[p] = norm;
            dst[p] = gamma_[c] * norm + beta_[c];
          }
        }
      }
    });
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const long plane = static_cast<long>(h_) * w_;
    const long count = static_cast<long>(n_) * plane;
    Tensor<T> dx(dy.shape);
    parallel_for(c_, [&](long cb, long ce) {
      for (long c = cb; c < ce; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int i = 0; i < n_; ++i) {
          const T* dyp = dy.ptr() + (static_cast<long>(i) * c_ + c) * plane;
          const T* xh = xhat_.ptr() + (static_cast<long>(i) * c_ + c) * plane;
          for (long p = 0; p < plane; ++p) {
            sum_dy += dyp[p];
            sum_dy_xhat += static_cast<double>(dyp[p]) * xh[p];
          }
        }
        grad_beta_[c] += static_cast<T>(sum_dy);
        grad_gamma_[c] += static_cast<T>(sum_dy_xhat);
        const T mean_dy = static_cast<T>(sum_dy / count);
        const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / count);
        const T scale = gamma_[c] * inv_std_[c];
        for (int i = 0; i < n_; ++i) {
          const T* dyp = dy.ptr() + (static_cast<long>(i) * c_ + c) * plane;
          const T* xh = xhat_.ptr() + (static_cast<long>(i) * c_ + c) * plane;
          T* dxp = dx.ptr() + (static_cast<long>(i) * c_ + c) * plane;
          for (long p = 0; p < plane; ++p) dxp[p] = scale * (dyp[p] - mean_dy - xh[p] * mean_dy_xhat);
        }
      }
    });
    return dx;
  }

  std::vector<ParamRef<T>> params() {
    return {{name_ + ".gamma", &gamma_, &grad_gamma_}, {name_ + ".beta", &beta_, &grad_beta_}};
  }
  std::vector<ParamRef<T>> buffers() {
    return {{name_ + ".running_mean", &running_mean_, nullptr}, {name_ + ".running_var", &running_var_, nullptr}};
  }

  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

private:
  std::string name_;
  int c_ = 0, n_ = 0, h_ = 0, w_ = 0;
  Tensor<T> gamma_, beta_, grad_gamma_, grad_beta_;
  Tensor<T> running_mean_, running_var_;
  Tensor<T> xhat_, inv_std_;
};

template <typename T>
class ReLU {
public:
  Tensor<T> forward(const Tensor<T>& x, bool train) {
    Tensor<T> y(x.shape);
    for (long i = 0; i < x.numel(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    if (train) x_sign_ = x;
    return y;
  }
  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx(dy.shape);
    for (long i = 0; i < dy.numel(); ++i) dx[i] = x_sign_[i] > T(0) ? dy[i] : T(0);
    return dx;
  }

private:
  Tensor<T> x_sign_;
};

template <typename T>
class Linear {
public:
  Linear() = default;
  Linear(std::string name, int in, int out, Rng& rng)
      : name_(std::move(name)), in_(in), out_(out), weight_({out, in}), bias_({out}),
        grad_weight_({out, in}), grad_bias_({out}) {
    init_normal(weight_, std::sqrt(2.0 / in), rng);
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    const long n = x.numel() / in_;
    if (train) x_cache_ = x;
    Tensor<T> y({static_cast<int>(n), out_});
    y.mat(n, out_).noalias() = x.mat(n, in_) * weight_.mat(out_, in_).transpose();
    auto ym = y.mat(n, out_);
    for (int c = 0; c < out_; ++c) ym.col(c).array() += bias_[c];
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const long n = dy.numel() / out_;
    Tensor<T> dx({static_cast<int>(n), in_});
    dx.mat(n, in_).noalias() = dy.mat(n, out_) * weight_.mat(out_, in_);
    grad_weight_.mat(out_, in_).noalias() += dy.mat(n, out_).transpose() * x_cache_.mat(n, in_);
    for (long i = 0; i < n; ++i)
      for (int c = 0; c < out_; ++c) grad_bias_[c] += dy[i * out_ + c];
    return dx;
  }

  std::vector<ParamRef<T>> params() {
    return {{name_ + ".weight", &weight_, &grad_weight_}, {name_ + ".bias", &bias_, &grad_bias_}};
  }

private:
  std::string name_;
  int in_ = 0, out_ = 0;
  Tensor<T> weight_, bias_, grad_weight_, grad_bias_;
  Tensor<T> x_cache_;
};

/// Cho-style gated recurrent unit over a [N, M, E] sequence; returns the
/// final hidden state [N, H]. Recurrent kernels are orthogonally initialized.
template <typename T>
class GRU {
public:
  GRU() = default;
  GRU(std::string name, int input, int hidden, Rng& rng)
      : name_(std::move(name)), e_(input), h_(hidden) {
    for (auto* w : {&wz_, &wr_, &wn_}) *w = Tensor<T>({hidden, input});
    for (auto* u : {&uz_, &ur_, &un_}) *u = Tensor<T>({hidden, hidden});
    for (auto* b : {&bz_, &br_, &bn_}) *b = Tensor<T>({hidden});
    for (auto* g : {&gwz_, &gwr_, &gwn_}) *g = Tensor<T>({hidden, input});
    for (auto* g : {&guz_, &gur_, &gun_}) *g = Tensor<T>({hidden, hidden});
    for (auto* g : {&gbz_, &gbr_, &gbn_}) *g = Tensor<T>({hidden});
    const double s = std::sqrt(1.0 / input);
    init_normal(wz_, s, rng);
    init_normal(wr_, s, rng);
    init_normal(wn_, s, rng);
    init_orthogonal(uz_, rng);
    init_orthogonal(ur_, rng);
    init_orthogonal(un_, rng);
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    const int n = x.dim(0), m = x.dim(1);
    steps_ = m;
    n_ = n;
    Tensor<T> h({n, h_});
    if (train) {
      x_cache_ = x;
      zs_.assign(m, Tensor<T>());
      rs_.assign(m, Tensor<T>());
      ns_.assign(m, Tensor<T>());
      hs_prev_.assign(m, Tensor<T>());
      rhs_.assign(m, Tensor<T>());
    }
    Tensor<T> xt({n, e_});
    for (int t = 0; t < m; ++t) {
      for (int i = 0; i < n; ++i)
        std::copy_n(x.ptr() + (static_cast<long>(i) * m + t) * e_, e_, xt.ptr() + static_cast<long>(i) * e_);
      Tensor<T> z = gate(xt, h, wz_, uz_, bz_);
      Tensor<T> r = gate(xt, h, wr_, ur_, br_);
      for (auto& v : z.data) v = sigmoid(v);
      for (auto& v : r.data) v = sigmoid(v);
      Tensor<T> rh({n, h_});
      for (long i = 0; i < rh.numel(); ++i) rh[i] = r[i] * h[i];
      Tensor<T> nc = gate(xt, rh, wn_, un_, bn_);
      for (auto& v : nc.data) v = std::tanh(v);
      Tensor<T> h_new({n, h_});
      for (long i = 0; i < h_new.numel(); ++i) h_new[i] = (T(1) - z[i]) * nc[i] + z[i] * h[i];
      if (train) {
        zs_[t] = std::move(z);
        rs_[t] = std::move(r);
        ns_[t] = std::move(nc);
        hs_prev_[t] = h;
        rhs_[t] = std::move(rh);
      }
      h = std::move(h_new);
    }
    return h;
  }

  /// dh_final -> gradient w.r.t. the input sequence [N, M, E].
  Tensor<T> backward(const Tensor<T>& dh_final) {
    Tensor<T> dx({n_, steps_, e_});
    Tensor<T> dh = dh_final;
    Tensor<T> xt({n_, e_});
    for (int t = steps_ - 1; t >= 0; --t) {
      for (int i = 0; i < n_; ++i)
        std::copy_n(x_cache_.ptr() + (static_cast<long>(i) * steps_ + t) * e_, e_,
                    xt.ptr() + static_cast<long>(i) * e_);
      const Tensor<T>&z = zs_[t], &r = rs_[t], &nc = ns_[t], &hp = hs_prev_[t], &rh = rhs_[t];
      Tensor<T> dz_pre({n_, h_}), dn_pre({n_, h_}), dh_prev({n_, h_});
      for (long i = 0; i < dh.numel(); ++i) {
        const T dzi = dh[i] * (hp[i] - nc[i]);
        dz_pre[i] = dzi * z[i] * (T(1) - z[i]);
        const T dni = dh[i] * (T(1) - z[i]);
        dn_pre[i] = dni * (T(1) - nc[i] * nc[i]);
        dh_prev[i] = dh[i] * z[i];
      }
      Tensor<T> drh({n_, h_});
      drh.mat(n_, h_).noalias() = dn_pre.mat(n_, h_) * un_.mat(h_, h_);
      Tensor<T> dr_pre({n_, h_});
      for (long i = 0; i < drh.numel(); ++i) {
        dh_prev[i] += drh[i] * r[i];
        dr_pre[i] = drh[i] * hp[i] * r[i] * (T(1) - r[i]);
      }
      // Parameter gradients (single whole-batch GEMMs, fixed order).
      gwn_.mat(h_, e_).noalias() += dn_pre.mat(n_, h_).transpose() * xt.mat(n_, e_);
      gun_.mat(h_, h_).noalias() += dn_pre.mat(n_, h_).transpose() * rh.mat(n_, h_);
      gwz_.mat(h_, e_).noalias() += dz_pre.mat(n_, h_).transpose() * xt.mat(n_, e_);
      guz_.mat(h_, h_).noalias() += dz_pre.mat(n_, h_).transpose() * hp.mat(n_, h_);
      gwr_.mat(h_, e_).noalias() += dr_pre.mat(n_, h_).transpose() * xt.mat(n_, e_);
      gur_.mat(h_, h_).noalias() += dr_pre.mat(n_, h_).transpose() * hp.mat(n_, h_);
      for (int i = 0; i < n_; ++i) {
        for (int c = 0; c < h_; ++c) {
          gbn_[c] += dn_pre[static_cast<long>(i) * h_ + c];
          gbz_[c] += dz_pre[static_cast<long>(i) * h_ + c];
          gbr_[c] += dr_pre[static_cast<long>(i) * h_ + c];
        }
      }
      Tensor<T> dxt({n_, e_});
      dxt.mat(n_, e_).noalias() = dn_pre.mat(n_, h_) * wn_.mat(h_, e_);
      dxt.mat(n_, e_).noalias() += dz_pre.mat(n_, h_) * wz_.mat(h_, e_);
      dxt.mat(n_, e_).noalias() += dr_pre.mat(n_, h_) * wr_.mat(h_, e_);
      for (int i = 0; i < n_; ++i)
        std::copy_n(dxt.ptr() + static_cast<long>(i) * e_, e_,
                    dx.ptr() + (static_cast<long>(i) * steps_ + t) * e_);
      dh_prev.mat(n_, h_).noalias() += dz_pre.mat(n_, h_) * uz_.mat(h_, h_);
      dh_prev.mat(n_, h_).noalias() += dr_pre.mat(n_, h_) * ur_.mat(h_, h_);
      dh = std::move(dh_prev);
    }
    return dx;
  }

  std::vector<ParamRef<T>> params() {
    return {{name_ + ".wz", &wz_, &gwz_}, {name_ + ".wr", &wr_, &gwr_}, {name_ + ".wn", &wn_, &gwn_},
            {name_ + ".uz", &uz_, &guz_}, {name_ + ".ur", &ur_, &gur_}, {name_ + ".un", &un_, &gun_},
            {name_ + ".bz", &bz_, &gbz_}, {name_ + ".br", &br_, &gbr_}, {name_ + ".bn", &bn_, &gbn_}};
  }

private:
  static T sigmoid(T v) { return T(1) / (T(1) + std::exp(-v)); }

  Tensor<T> gate(const Tensor<T>& xt, const Tensor<T>& h, const Tensor<T>& w, const Tensor<T>& u,
                 const Tensor<T>& b) {
    Tensor<T> a({n_, h_});
    a.mat(n_, h_).noalias() = xt.mat(n_, e_) * w.mat(h_, e_).transpose();
    a.mat(n_, h_).noalias() += h.mat(n_, h_) * u.mat(h_, h_).transpose();
    auto am = a.mat(n_, h_);
    for (int c = 0; c < h_; ++c) am.col(c).array() += b[c];
    return a;
  }

  std::string name_;
  int e_ = 0, h_ = 0, n_ = 0, steps_ = 0;
  Tensor<T> wz_, wr_, wn_, uz_, ur_, un_, bz_, br_, bn_;
  Tensor<T> gwz_, gwr_, gwn_, guz_, gur_, gun_, gbz_, gbr_, gbn_;
  Tensor<T> x_cache_;
  std::vector<Tensor<T>> zs_, rs_, ns_, hs_prev_, rhs_;
};

template <typename T>
class NearestUpsample2x {
public:
  Tensor<T> forward(const Tensor<T>& x) {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    in_h_ = h;
    in_w_ = w;
    Tensor<T> y({n, c, 2 * h, 2 * w});
    for (long nc = 0; nc < static_cast<long>(n) * c; ++nc) {
      const T* src = x.ptr() + nc * h * w;
      T* dst = y.ptr() + nc * 4L * h * w;
      for (int r = 0; r < 2 * h; ++r)
        for (int cc = 0; cc < 2 * w; ++cc) dst[static_cast<long>(r) * 2 * w + cc] = src[(r / 2) * w + cc / 2];
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& dy) {
    const int n = dy.dim(0), c = dy.dim(1);
    Tensor<T> dx({n, c, in_h_, in_w_});
    for (long nc = 0; nc < static_cast<long>(n) * c; ++nc) {
      const T* src = dy.ptr() + nc * 4L * in_h_ * in_w_;
      T* dst = dx.ptr() + nc * static_cast<long>(in_h_) * in_w_;
      for (int r = 0; r < 2 * in_h_; ++r)
        for (int cc = 0; cc < 2 * in_w_; ++cc)
          dst[static_cast<long>(r / 2) * in_w_ + cc / 2] += src[static_cast<long>(r) * 2 * in_w_ + cc];
    }
    return dx;
  }

private:
  int in_h_ = 0, in_w_ = 0;
};

/// conv-bn-relu-conv-bn with an identity (or projected) skip, ReLU on the sum.
template <typename T>
class ResBlock {
public:
  ResBlock() = default;
  ResBlock(const std::string& name, int in_c, int out_c, int stride, Rng& rng)
      : conv1_(name + ".conv1", in_c, out_c, 3, stride, 1, rng),
        conv2_(name + ".conv2", out_c, out_c, 3, 1, 1, rng), bn1_(name + ".bn1", out_c),
        bn2_(name + ".bn2", out_c), projected_(in_c != out_c || stride != 1) {
    if (projected_) {
      proj_ = Conv2d<T>(name + ".proj", in_c, out_c, 1, stride, 0, rng);
      proj_bn_ = BatchNorm2d<T>(name + ".proj_bn", out_c);
    }
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    Tensor<T> main = bn1_.forward(conv1_.forward(x, train), train);
    main = relu1_.forward(main, train);
    main = bn2_.forward(conv2_.forward(main, train), train);
    Tensor<T> skip = projected_ ? proj_bn_.forward(proj_.forward(x, train), train) : x;
    for (long i = 0; i < main.numel(); ++i) main[i] += skip[i];
    return relu_out_.forward(main, train);
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dsum = relu_out_.backward(dy);
    Tensor<T> dmain = conv1_.backward(bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(dsum)))));
    Tensor<T> dskip = projected_ ? proj_.backward(proj_bn_.backward(dsum)) : dsum;
    for (long i = 0; i < dmain.numel(); ++i) dmain[i] += dskip[i];
    return dmain;
  }

  std::vector<ParamRef<T>> params() {
    auto out = conv1_.params();
    append(out, bn1_.params());
    append(out, conv2_.params());
    append(out, bn2_.params());
    if (projected_) {
      append(out, proj_.params());
      append(out, proj_bn_.params());
    }
    return out;
  }
  std::vector<ParamRef<T>> buffers() {
    auto out = bn1_.buffers();
    append(out, bn2_.buffers());
    if (projected_) append(out, proj_bn_.buffers());
    return out;
  }

  static void append(std::vector<ParamRef<T>>& dst, std::vector<ParamRef<T>> src) {
    dst.insert(dst.end(), src.begin(), src.end());
  }

private:
  Conv2d<T> conv1_, conv2_, proj_;
  BatchNorm2d<T> bn1_, bn2_, proj_bn_;
  ReLU<T> relu1_, relu_out_;
  bool projected_ = false;
};

/// Residual transposed-convolution block: tconv(k4 s2) + BN on the main path,
/// nearest-upsample + 1x1 conv on the skip, ReLU on the sum. Doubles the
/// spatial resolution.
template <typename T>
class UpBlock {
public:
  UpBlock() = default;
  UpBlock(const std::string& name, int in_c, int out_c, Rng& rng)
      : tconv_(name + ".tconv", in_c, out_c, 4, 2, 1, rng), bn_(name + ".bn", out_c),
        skip_conv_(name + ".skip", in_c, out_c, 1, 1, 0, rng) {}

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    Tensor<T> main = bn_.forward(tconv_.forward(x, train), train);
    Tensor<T> skip = skip_conv_.forward(up_.forward(x), train);
    for (long i = 0; i < main.numel(); ++i) main[i] += skip[i];
    return relu_.forward(main, train);
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dsum = relu_.backward(dy);
    Tensor<T> dx = tconv_.backward(bn_.backward(dsum));
    Tensor<T> dskip = up_.backward(skip_conv_.backward(dsum));
    for (long i = 0; i < dx.numel(); ++i) dx[i] += dskip[i];
    return dx;
  }

  std::vector<ParamRef<T>> params() {
    auto out = tconv_.params();
    ResBlock<T>::append(out, bn_.params());
    ResBlock<T>::append(out, skip_conv_.params());
    return out;
  }
  std::vector<ParamRef<T>> buffers() { return bn_.buffers(); }

private:
  ConvTranspose2d<T> tconv_;
  BatchNorm2d<T> bn_;
  Conv2d<T> skip_conv_;
  NearestUpsample2x<T> up_;
  ReLU<T> relu_;
};

}  // namespace nowcast::nn
