#pragma once

// Layers with explicit forward/backward passes.
//
// Convolutional activations use a channel-major [channels][batch][time]
// layout so that im2col over the whole batch turns every convolution into a
// single GEMM and batch-norm statistics are contiguous per channel. Dense
// activations are [batch][features].

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "eegclip/errors.hpp"
#include "eegclip/rng.hpp"
#include "eegclip/tensor.hpp"

namespace eegclip::nn {

enum class Mode { Train, Eval };

template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  Param() = default;
  Param(std::string n, std::vector<std::size_t> shape, bool train = true)
      : name(std::move(n)), value(shape), grad(train ? shape : std::vector<std::size_t>{0}),
        trainable(train) {}
};

template <class T>
using ParamList = std::vector<Param<T>*>;

template <class T>
void zero_grads(const ParamList<T>& ps) {
  for (auto* p : ps)
    if (p->trainable) p->grad.zero();
}

template <class T>
void init_uniform(Tensor<T>& t, double bound, Rng& rng) {
  for (auto& v : t.data) v = T((2.0 * uniform01(rng) - 1.0) * bound);
}

// [B][C][T] <-> [C][B][T]
template <class T>
Tensor<T> swap_leading(const Tensor<T>& x) {
  const std::size_t a = x.dim(0), b = x.dim(1), t = x.dim(2);
  Tensor<T> y({b, a, t});
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j)
      std::copy_n(x.ptr() + (i * b + j) * t, t, y.ptr() + (j * a + i) * t);
  return y;
}

// ------------------------------------------------------------------ conv

template <class T>
struct ConvCache {
  Tensor<T> cols;  // [Cin*K][B*Tout]
  std::size_t batch = 0, t_in = 0, t_out = 0;
};

namespace detail {

template <class T>
Tensor<T> im2col(const Tensor<T>& x, std::size_t k) {
  const std::size_t cin = x.dim(0), b = x.dim(1), tin = x.dim(2), tout = tin - k + 1;
  Tensor<T> cols({cin * k, b * tout});
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t kk = 0; kk < k; ++kk) {
      T* dst = cols.ptr() + (c * k + kk) * b * tout;
      for (std::size_t bi = 0; bi < b; ++bi)
        std::copy_n(x.ptr() + (c * b + bi) * tin + kk, tout, dst + bi * tout);
    }
  return cols;
}

template <class T>
void col2im_add(const Tensor<T>& cols, std::size_t k, Tensor<T>& dx) {
  const std::size_t cin = dx.dim(0), b = dx.dim(1), tin = dx.dim(2), tout = tin - k + 1;
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T* src = cols.ptr() + (c * k + kk) * b * tout;
      for (std::size_t bi = 0; bi < b; ++bi) {
        T* d = dx.ptr() + (c * b + bi) * tin + kk;
        const T* s = src + bi * tout;
        for (std::size_t t = 0; t < tout; ++t) d[t] += s[t];
      }
    }
}

// y[Cout][B][Tout] = W[Cout][Cin*K] * cols + bias
template <class T>
Tensor<T> conv_forward(const Tensor<T>& x, const Tensor<T>& w, const T* bias, std::size_t k,
                       ConvCache<T>* cache) {
  const std::size_t cout = w.dim(0), cin = x.dim(0), b = x.dim(1), tin = x.dim(2);
  if (w.dim(1) != cin * k)
    throw ValidationError("conv weight expects " + std::to_string(w.dim(1) / k) +
                          " input channels, got " + std::to_string(cin));
  if (tin < k) throw ValidationError("conv input shorter than kernel");
  const std::size_t tout = tin - k + 1;
  Tensor<T> cols = im2col(x, k);
  Tensor<T> y({cout, b, tout});
  blas::gemm<T>(false, false, cout, b * tout, cin * k, T(1), w.ptr(), cin * k, cols.ptr(),
                b * tout, T(0), y.ptr(), b * tout);
  if (bias)
    for (std::size_t o = 0; o < cout; ++o) {
      T* row = y.ptr() + o * b * tout;
      for (std::size_t i = 0; i < b * tout; ++i) row[i] += bias[o];
    }
  if (cache) {
    cache->cols = std::move(cols);
    cache->batch = b;
    cache->t_in = tin;
    cache->t_out = tout;
  }
  return y;
}

// Accumulates dW (and db when given); returns dx when requested.
template <class T>
Tensor<T> conv_backward(const ConvCache<T>& c, const Tensor<T>& dy, const Tensor<T>& w,
                        Tensor<T>& dw, T* dbias, std::size_t k, bool need_dx) {
  const std::size_t cout = w.dim(0), cin = w.dim(1) / k, n = c.batch * c.t_out;
  blas::gemm<T>(false, true, cout, cin * k, n, T(1), dy.ptr(), n, c.cols.ptr(), n, T(1), dw.ptr(),
                cin * k);
  if (dbias)
    for (std::size_t o = 0; o < cout; ++o) {
      double s = 0;
      const T* row = dy.ptr() + o * n;
      for (std::size_t i = 0; i < n; ++i) s += row[i];
      dbias[o] += T(s);
    }
  if (!need_dx) return {};
  Tensor<T> dcols({cin * k, n});
  blas::gemm<T>(true, false, cin * k, n, cout, T(1), w.ptr(), cin * k, dy.ptr(), n, T(0),
                dcols.ptr(), n);
  Tensor<T> dx({cin, c.batch, c.t_in});
  col2im_add(dcols, k, dx);
  return dx;
}

}  // namespace detail

// Temporal convolution over [Cin][B][T].
template <class T>
struct Conv1d {
  std::size_t in_ch = 0, out_ch = 0, kernel = 0;
  Param<T> weight;  // [out][in*kernel]
  Param<T> bias;    // [out] or empty
  bool has_bias = false;

  Conv1d() = default;
  Conv1d(const std::string& name, std::size_t in, std::size_t out, std::size_t k, bool with_bias)
      : in_ch(in), out_ch(out), kernel(k), weight(name + ".weight", {out, in * k}),
        has_bias(with_bias) {
    if (with_bias) bias = Param<T>(name + ".bias", {out});
  }

  void init_xavier(Rng& rng) {
    init_uniform(weight.value, std::sqrt(6.0 / double(in_ch * kernel + out_ch * kernel)), rng);
    if (has_bias) bias.value.zero();
  }

  Tensor<T> forward(const Tensor<T>& x, ConvCache<T>* cache) const {
    return detail::conv_forward(x, weight.value, has_bias ? bias.value.ptr() : nullptr, kernel,
                                cache);
  }

  Tensor<T> backward(const ConvCache<T>& c, const Tensor<T>& dy, bool need_dx) {
    return detail::conv_backward(c, dy, weight.value, weight.grad,
                                 has_bias ? bias.grad.ptr() : nullptr, kernel, need_dx);
  }

  void collect(ParamList<T>& ps) {
    ps.push_back(&weight);
    if (has_bias) ps.push_back(&bias);
  }
};

// Deep4's split first layer: a temporal convolution per filter followed by a
// spatial convolution across all electrodes. Both are linear, so the pair is
// evaluated as one fused [F][C*K] convolution; gradients are mapped back onto
// the two factors.
template <class T>
struct SplitTemporalSpatialConv {
  std::size_t n_electrodes = 0, n_filters = 0, kernel = 0;
  Param<T> time_weight;  // [F][K]
  Param<T> time_bias;    // [F]
  Param<T> spat_weight;  // [F][F][C]

  SplitTemporalSpatialConv() = default;
  SplitTemporalSpatialConv(const std::string& name, std::size_t electrodes, std::size_t filters,
                           std::size_t k)
      : n_electrodes(electrodes), n_filters(filters), kernel(k),
        time_weight(name + ".conv_time.weight", {filters, k}),
        time_bias(name + ".conv_time.bias", {filters}),
        spat_weight(name + ".conv_spat.weight", {filters, filters, electrodes}) {}

  void init_xavier(Rng& rng) {
    init_uniform(time_weight.value, std::sqrt(6.0 / double(kernel + n_filters * kernel)), rng);
    time_bias.value.zero();
    const double fan = double(n_filters * n_electrodes);
    init_uniform(spat_weight.value, std::sqrt(6.0 / (fan + fan)), rng);
  }

  // W_eff[f][c*K+k] = sum_g spat[f][g][c] * time[g][k]
  Tensor<T> fused_weight() const {
    const std::size_t F = n_filters, C = n_electrodes, K = kernel;
    Tensor<T> w({F, C * K});
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t g = 0; g < F; ++g)
        for (std::size_t c = 0; c < C; ++c) {
          const T s = spat_weight.value(f, g, c);
          for (std::size_t k = 0; k < K; ++k) w(f, c * K + k) += s * time_weight.value(g, k);
        }
    return w;
  }

  std::vector<T> fused_bias() const {
    std::vector<T> b(n_filters, T(0));
    for (std::size_t f = 0; f < n_filters; ++f)
      for (std::size_t g = 0; g < n_filters; ++g) {
        T s = 0;
        for (std::size_t c = 0; c < n_electrodes; ++c) s += spat_weight.value(f, g, c);
        b[f] += s * time_bias.value.data[g];
      }
    return b;
  }

  Tensor<T> forward(const Tensor<T>& x, ConvCache<T>* cache) const {
    const auto w = fused_weight();
    const auto b = fused_bias();
    return detail::conv_forward(x, w, b.data(), kernel, cache);
  }

  Tensor<T> backward(const ConvCache<T>& c, const Tensor<T>& dy, bool need_dx) {
    const std::size_t F = n_filters, C = n_electrodes, K = kernel;
    const auto w = fused_weight();
    Tensor<T> dw({F, C * K});
    std::vector<T> db(F, T(0));
    auto dx = detail::conv_backward(c, dy, w, dw, db.data(), K, need_dx);
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t g = 0; g < F; ++g)
        for (std::size_t ch = 0; ch < C; ++ch) {
          T ds = 0;
          for (std::size_t k = 0; k < K; ++k) ds += dw(f, ch * K + k) * time_weight.value(g, k);
          ds += db[f] * time_bias.value.data[g];
          spat_weight.grad(f, g, ch) += ds;
          const T s = spat_weight.value(f, g, ch);
          for (std::size_t k = 0; k < K; ++k) time_weight.grad(g, k) += dw(f, ch * K + k) * s;
          time_bias.grad.data[g] += db[f] * s;
        }
    return dx;
  }

  void collect(ParamList<T>& ps) {
    ps.push_back(&time_weight);
    ps.push_back(&time_bias);
    ps.push_back(&spat_weight);
  }
};

// ------------------------------------------------------------- batchnorm

template <class T>
struct BatchNormCache {
  Tensor<T> x_hat;
  std::vector<T> inv_std;
  std::vector<double> batch_mean, batch_var_unbiased;
  bool training = false;
};

// Per-channel normalisation over batch and time of a [C][B][T] tensor.
template <class T>
struct BatchNorm {
  std::size_t channels = 0;
  double momentum = 0.1, eps = 1e-5;
  Param<T> gamma, beta;
  Param<T> running_mean, running_var;  // buffers

  BatchNorm() = default;
  BatchNorm(const std::string& name, std::size_t c, double mom = 0.1, double e = 1e-5)
      : channels(c), momentum(mom), eps(e), gamma(name + ".weight", {c}),
        beta(name + ".bias", {c}), running_mean(name + ".running_mean", {c}, false),
        running_var(name + ".running_var", {c}, false) {
    reset();
  }

  void reset() {
    std::fill(gamma.value.data.begin(), gamma.value.data.end(), T(1));
    beta.value.zero();
    running_mean.value.zero();
    std::fill(running_var.value.data.begin(), running_var.value.data.end(), T(1));
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode, BatchNormCache<T>* cache) const {
    const std::size_t C = x.dim(0), n = x.size() / C;
    Tensor<T> y(x.shape);
    if (cache) {
      cache->x_hat = Tensor<T>(x.shape);
      cache->inv_std.assign(C, T(0));
      cache->batch_mean.assign(C, 0.0);
      cache->batch_var_unbiased.assign(C, 0.0);
      cache->training = mode == Mode::Train;
    }
    for (std::size_t c = 0; c < C; ++c) {
      const T* xs = x.ptr() + c * n;
      double mean, var;
      if (mode == Mode::Train) {
        double s = 0;
        for (std::size_t i = 0; i < n; ++i) s += xs[i];
        mean = s / double(n);
        double ss = 0;
        for (std::size_t i = 0; i < n; ++i) ss += (xs[i] - mean) * (xs[i] - mean);
        var = ss / double(n);
        if (cache) {
          cache->batch_mean[c] = mean;
          cache->batch_var_unbiased[c] = n > 1 ? ss / double(n - 1) : var;
        }
      } else {
        mean = double(running_mean.value.data[c]);
        var = double(running_var.value.data[c]);
      }
      const T inv = T(1.0 / std::sqrt(var + eps));
      const T g = gamma.value.data[c], b = beta.value.data[c], m = T(mean);
      T* ys = y.ptr() + c * n;
      for (std::size_t i = 0; i < n; ++i) {
        const T xh = (xs[i] - m) * inv;
        ys[i] = g * xh + b;
        if (cache) cache->x_hat.data[c * n + i] = xh;
      }
      if (cache) cache->inv_std[c] = inv;
    }
    return y;
  }

  void update_running(const BatchNormCache<T>& c) {
    for (std::size_t i = 0; i < channels; ++i) {
      auto& rm = running_mean.value.data[i];
      auto& rv = running_var.value.data[i];
      rm = T((1.0 - momentum) * double(rm) + momentum * c.batch_mean[i]);
      rv = T((1.0 - momentum) * double(rv) + momentum * c.batch_var_unbiased[i]);
    }
  }

  Tensor<T> backward(const BatchNormCache<T>& c, const Tensor<T>& dy) {
    const std::size_t C = dy.dim(0), n = dy.size() / C;
    Tensor<T> dx(dy.shape);
    for (std::size_t ch = 0; ch < C; ++ch) {
      const T* d = dy.ptr() + ch * n;
      const T* xh = c.x_hat.ptr() + ch * n;
      double sum_d = 0, sum_dx = 0;
      for (std::size_t i = 0; i < n; ++i) {
        sum_d += d[i];
        sum_dx += double(d[i]) * double(xh[i]);
      }
      gamma.grad.data[ch] += T(sum_dx);
      beta.grad.data[ch] += T(sum_d);
      const double g = double(gamma.value.data[ch]) * double(c.inv_std[ch]);
      T* out = dx.ptr() + ch * n;
      if (c.training) {
        const double md = sum_d / double(n), mdx = sum_dx / double(n);
        for (std::size_t i = 0; i < n; ++i)
          out[i] = T(g * (double(d[i]) - md - double(xh[i]) * mdx));
      } else {
        for (std::size_t i = 0; i < n; ++i) out[i] = T(g * double(d[i]));
      }
    }
    return dx;
  }

  void collect(ParamList<T>& ps) {
    ps.push_back(&gamma);
    ps.push_back(&beta);
    ps.push_back(&running_mean);
    ps.push_back(&running_var);
  }
};

// ------------------------------------------------------- pointwise layers

template <class T>
Tensor<T> elu_forward(Tensor<T> x, T alpha = T(1)) {
  for (auto& v : x.data)
    if (v <= T(0)) v = alpha * std::expm1(v);
  return x;
}

// Uses the cached output: d/dx = 1 for y > 0, y + alpha otherwise.
template <class T>
Tensor<T> elu_backward(const Tensor<T>& y, Tensor<T> dy, T alpha = T(1)) {
  for (std::size_t i = 0; i < dy.size(); ++i)
    if (y.data[i] <= T(0)) dy.data[i] *= y.data[i] + alpha;
  return dy;
}

template <class T>
Tensor<T> relu_forward(Tensor<T> x) {
  for (auto& v : x.data) v = std::max(v, T(0));
  return x;
}

template <class T>
Tensor<T> relu_backward(const Tensor<T>& y, Tensor<T> dy) {
  for (std::size_t i = 0; i < dy.size(); ++i)
    if (!(y.data[i] > T(0))) dy.data[i] = T(0);
  return dy;
}

template <class T>
struct PoolCache {
  std::vector<std::uint32_t> argmax;
  std::vector<std::size_t> in_shape;
};

inline std::size_t pooled_length(std::size_t t, std::size_t size, std::size_t stride) {
  if (t < size) throw ValidationError("pool input shorter than pool size");
  return (t - size) / stride + 1;
}

// Max-pool along the last axis of [C][B][T].
template <class T>
Tensor<T> maxpool_forward(const Tensor<T>& x, std::size_t size, std::size_t stride,
                          PoolCache<T>* cache) {
  const std::size_t rows = x.dim(0) * x.dim(1), tin = x.dim(2);
  const std::size_t tout = pooled_length(tin, size, stride);
  Tensor<T> y({x.dim(0), x.dim(1), tout});
  if (cache) {
    cache->argmax.resize(rows * tout);
    cache->in_shape = x.shape;
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xs = x.ptr() + r * tin;
    T* ys = y.ptr() + r * tout;
    for (std::size_t t = 0; t < tout; ++t) {
      std::size_t best = t * stride;
      for (std::size_t j = best + 1; j < t * stride + size; ++j)
        if (xs[j] > xs[best]) best = j;
      ys[t] = xs[best];
      if (cache) cache->argmax[r * tout + t] = std::uint32_t(best);
    }
  }
  return y;
}

template <class T>
Tensor<T> maxpool_backward(const PoolCache<T>& c, const Tensor<T>& dy) {
  Tensor<T> dx(c.in_shape);
  const std::size_t tin = c.in_shape[2], tout = dy.dim(2), rows = dy.dim(0) * dy.dim(1);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < tout; ++t)
      dx.data[r * tin + c.argmax[r * tout + t]] += dy.data[r * tout + t];
  return dx;
}

// Inverted dropout; the mask already carries the 1/(1-p) scale.
template <class T>
Tensor<T> dropout_forward(Tensor<T> x, double p, Rng& rng, std::vector<T>& mask) {
  mask.resize(x.size());
  const T keep_scale = T(1.0 / (1.0 - p));
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask[i] = uniform01(rng) < p ? T(0) : keep_scale;
    x.data[i] *= mask[i];
  }
  return x;
}

template <class T>
Tensor<T> dropout_backward(const std::vector<T>& mask, Tensor<T> dy) {
  for (std::size_t i = 0; i < dy.size(); ++i) dy.data[i] *= mask[i];
  return dy;
}

// ---------------------------------------------------------------- linear

// y[B][out] = x[B][in] W^T + b
template <class T>
struct Linear {
  std::size_t in_dim = 0, out_dim = 0;
  Param<T> weight;  // [out][in]
  Param<T> bias;    // [out]

  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out)
      : in_dim(in), out_dim(out), weight(name + ".weight", {out, in}), bias(name + ".bias", {out}) {}

  // PyTorch's default nn.Linear initialisation.
  void init_default(Rng& rng) {
    const double bound = 1.0 / std::sqrt(double(in_dim));
    init_uniform(weight.value, bound, rng);
    init_uniform(bias.value, bound, rng);
  }

  void init_xavier(Rng& rng) {
    init_uniform(weight.value, std::sqrt(6.0 / double(in_dim + out_dim)), rng);
    bias.value.zero();
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    if (x.rank() != 2 || x.dim(1) != in_dim)
      throw ValidationError("linear layer expects " + std::to_string(in_dim) +
                            " input features, got " + shape_str(x.shape));
    const std::size_t b = x.dim(0);
    Tensor<T> y({b, out_dim});
    for (std::size_t i = 0; i < b; ++i)
      std::copy(bias.value.data.begin(), bias.value.data.end(), y.ptr() + i * out_dim);
    blas::gemm<T>(false, true, b, out_dim, in_dim, T(1), x.ptr(), in_dim, weight.value.ptr(),
                  in_dim, T(1), y.ptr(), out_dim);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy, bool need_dx = true) {
    const std::size_t b = x.dim(0);
    blas::gemm<T>(true, false, out_dim, in_dim, b, T(1), dy.ptr(), out_dim, x.ptr(), in_dim, T(1),
                  weight.grad.ptr(), in_dim);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t o = 0; o < out_dim; ++o) bias.grad.data[o] += dy(i, o);
    if (!need_dx) return {};
    Tensor<T> dx({b, in_dim});
    blas::gemm<T>(false, false, b, in_dim, out_dim, T(1), dy.ptr(), out_dim, weight.value.ptr(),
                  in_dim, T(0), dx.ptr(), in_dim);
    return dx;
  }

  void collect(ParamList<T>& ps) {
    ps.push_back(&weight);
    ps.push_back(&bias);
  }
};

// Row-wise L2 normalisation and its backward pass.
template <class T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x, std::vector<T>* norms = nullptr) {
  Tensor<T> y = x;
  if (norms) norms->assign(x.dim(0), T(0));
  for (std::size_t i = 0; i < x.dim(0); ++i) {
    auto r = y.row(i);
    const T n = std::max(l2_norm<T>(r), T(1e-12));
    for (auto& v : r) v /= n;
    if (norms) (*norms)[i] = n;
  }
  return y;
}

// dx = (dy - y <y, dy>) / |x|
template <class T>
Tensor<T> l2_normalize_backward(const Tensor<T>& y, const std::vector<T>& norms,
                                const Tensor<T>& dy) {
  Tensor<T> dx(dy.shape);
  for (std::size_t i = 0; i < y.dim(0); ++i) {
    const auto yr = y.row(i);
    const auto dr = dy.row(i);
    const T p = dot<T>(yr, dr);
    auto out = dx.row(i);
    for (std::size_t j = 0; j < yr.size(); ++j) out[j] = (dr[j] - yr[j] * p) / norms[i];
  }
  return dx;
}

}  // namespace eegclip::nn
