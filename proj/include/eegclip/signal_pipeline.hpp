#pragma once

// Preprocessing chain and windowing. Every transform is a pure function.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "eegclip/data_io.hpp"
#include "eegclip/errors.hpp"
#include "eegclip/tensor.hpp"

namespace eegclip {

struct PreprocessConfig {
  std::vector<std::string> channel_subset = standard_1020_channels();
  double skip_s = 60.0;
  double keep_s = 120.0;
  double clip_uv = 800.0;
  double target_rate_hz = 100.0;
  double scale_divisor = 30.0;

  void validate() const {
    if (channel_subset.empty()) throw ValidationError("channel subset is empty");
    if (!(clip_uv > 0)) throw ValidationError("clip_uv must be positive");
    if (!(target_rate_hz > 0)) throw ValidationError("target_rate_hz must be positive");
    if (scale_divisor == 0) throw ValidationError("scale_divisor must be nonzero");
    if (skip_s < 0 || !(keep_s > 0)) throw ValidationError("invalid crop interval");
  }
};

struct WindowConfig {
  std::size_t length_samples = 1200;
  std::size_t stride_samples = 519;

  void validate() const {
    if (length_samples == 0 || stride_samples == 0)
      throw ValidationError("window length and stride must be positive");
    if (stride_samples > length_samples)
      throw ValidationError("window stride must not exceed window length");
  }
};

struct Window {
  std::string recording_id;
  std::size_t start_sample = 0;
  Tensor<float> data;  // [channels, length_samples]
};

inline Recording select_channels(const Recording& rec, const std::vector<std::string>& subset) {
  Recording out = rec;
  out.channel_names = subset;
  out.signal = Tensor<float>({subset.size(), rec.n_samples()});
  for (std::size_t i = 0; i < subset.size(); ++i) {
    const auto it = std::find(rec.channel_names.begin(), rec.channel_names.end(), subset[i]);
    if (it == rec.channel_names.end())
      throw ValidationError("recording '" + rec.id + "' has no channel '" + subset[i] + "'");
    const auto src = rec.signal.row(std::size_t(it - rec.channel_names.begin()));
    std::copy(src.begin(), src.end(), out.signal.row(i).begin());
  }
  return out;
}

inline Recording crop(const Recording& rec, double skip_s, double keep_s) {
  const auto start = std::size_t(std::llround(skip_s * rec.rate_hz));
  const auto length = std::size_t(std::llround(keep_s * rec.rate_hz));
  if (start + length > rec.n_samples())
    throw RejectRecording("recording '" + rec.id + "' lasts " +
                          detail::format_double(rec.duration_s()) + " s, needs " +
                          detail::format_double(skip_s + keep_s) + " s");
  Recording out = rec;
  out.signal = Tensor<float>({rec.n_channels(), length});
  for (std::size_t c = 0; c < rec.n_channels(); ++c) {
    const auto src = rec.signal.row(c);
    std::copy(src.begin() + std::ptrdiff_t(start), src.begin() + std::ptrdiff_t(start + length),
              out.signal.row(c).begin());
  }
  return out;
}

template <class T>
Tensor<T> clip_amplitude(Tensor<T> signal, double limit_uv) {
  const T hi = T(limit_uv), lo = T(-limit_uv);
  for (auto& v : signal.data) v = std::clamp(v, lo, hi);
  return signal;
}

template <class T>
Tensor<T> scale(Tensor<T> signal, double divisor) {
  if (divisor == 0) throw ValidationError("scale divisor must be nonzero");
  for (auto& v : signal.data) v = T(double(v) / divisor);
  return signal;
}

// ---------------------------------------------------------------- resample

struct Ratio {
  std::uint64_t up = 1;
  std::uint64_t down = 1;
};

// Best rational approximation of dst/src with a bounded denominator.
inline Ratio rational_ratio(double src_hz, double dst_hz, std::uint64_t max_den = 4096) {
  const double x = dst_hz / src_hz;
  const double rs = std::round(src_hz), rd = std::round(dst_hz);
  if (rs == src_hz && rd == dst_hz && rs > 0 && rd > 0) {
    const auto g = std::gcd(std::uint64_t(rs), std::uint64_t(rd));
    return {std::uint64_t(rd) / g, std::uint64_t(rs) / g};
  }
  // Continued fractions.
  std::uint64_t p0 = 0, q0 = 1, p1 = 1, q1 = 0;
  double v = x;
  for (int iter = 0; iter < 64; ++iter) {
    const double a = std::floor(v);
    const auto ai = std::uint64_t(a);
    const std::uint64_t p2 = ai * p1 + p0, q2 = ai * q1 + q0;
    if (q2 > max_den) break;
    p0 = p1, q0 = q1, p1 = p2, q1 = q2;
    if (v - a < 1e-12) break;
    v = 1.0 / (v - a);
  }
  if (p1 == 0) p1 = 1;
  return {p1, q1};
}

namespace detail {

inline double bessel_i0(double x) { return std::cyl_bessel_i(0.0, x); }

// Kaiser-windowed sinc low-pass for an up-by-L/down-by-M polyphase resampler,
// gain L, cutoff at the lower of the two Nyquist rates.
inline std::vector<double> resample_filter(std::uint64_t up, std::uint64_t down, double beta = 5.0,
                                           std::uint64_t half_zero_crossings = 10) {
  const std::uint64_t m = std::max(up, down);
  const std::uint64_t half = half_zero_crossings * m;
  const double cutoff = 1.0 / double(m);  // fraction of the upsampled Nyquist
  std::vector<double> h(2 * half + 1);
  const double denom = bessel_i0(beta);
  for (std::uint64_t i = 0; i < h.size(); ++i) {
    const double n = double(i) - double(half);
    const double arg = 3.141592653589793 * cutoff * n;
    const double sinc = n == 0 ? 1.0 : std::sin(arg) / arg;
    const double r = n / double(half);
    const double w = bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / denom;
    h[i] = double(up) * cutoff * sinc * w;
  }
  return h;
}

}  // namespace detail

// Polyphase FIR resampling along the time axis of a [channels x samples]
// matrix. Output length is round(n * dst / src).
template <class T>
Tensor<T> resample(const Tensor<T>& signal, double src_hz, double dst_hz) {
  if (!(src_hz > 0) || !(dst_hz > 0)) throw ValidationError("sampling rates must be positive");
  if (src_hz == dst_hz) return signal;
  const auto [up, down] = rational_ratio(src_hz, dst_hz);
  const auto h = detail::resample_filter(up, down);
  const auto half = std::int64_t(h.size() / 2);
  const std::size_t n_in = signal.dim(1);
  const auto n_out = std::size_t(std::llround(double(n_in) * dst_hz / src_hz));
  const auto L = std::int64_t(up), M = std::int64_t(down);

  Tensor<T> out({signal.dim(0), n_out});
  for (std::size_t c = 0; c < signal.dim(0); ++c) {
    const auto x = signal.row(c);
    auto y = out.row(c);
    for (std::size_t m = 0; m < n_out; ++m) {
      // Upsampled-grid position of output sample m is m*M; input sample n sits at n*L.
      const std::int64_t pos = std::int64_t(m) * M;
      std::int64_t n_lo = (pos - half + L - 1) / L;
      if (pos - half < 0) n_lo = -((half - pos) / L);
      const std::int64_t n_hi = (pos + half) / L;
      double acc = 0.0;
      for (std::int64_t n = std::max<std::int64_t>(n_lo, 0);
           n <= std::min<std::int64_t>(n_hi, std::int64_t(n_in) - 1); ++n)
        acc += h[std::size_t(pos - n * L + half)] * double(x[std::size_t(n)]);
      y[m] = T(acc);
    }
  }
  return out;
}

// select_channels -> crop -> clip_amplitude -> resample -> scale.
inline Recording preprocess(const Recording& rec, const PreprocessConfig& cfg) {
  cfg.validate();
  Recording out = select_channels(rec, cfg.channel_subset);
  out = crop(out, cfg.skip_s, cfg.keep_s);
  out.signal = clip_amplitude(std::move(out.signal), cfg.clip_uv);
  out.signal = resample(out.signal, out.rate_hz, cfg.target_rate_hz);
  // Resampling rings around clipped plateaus; hold the limit afterwards too.
  out.signal = clip_amplitude(std::move(out.signal), cfg.clip_uv);
  out.rate_hz = cfg.target_rate_hz;
  out.signal = scale(std::move(out.signal), cfg.scale_divisor);
  return out;
}

// Base starts 0, stride, 2*stride, ... plus an end-aligned tail window when
// the last base window stops short of n.
inline std::vector<std::size_t> window_starts(std::size_t n, const WindowConfig& cfg) {
  cfg.validate();
  if (n < cfg.length_samples)
    throw ValidationError("recording has " + std::to_string(n) + " samples, window needs " +
                          std::to_string(cfg.length_samples));
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + cfg.length_samples <= n; s += cfg.stride_samples) starts.push_back(s);
  if (starts.back() + cfg.length_samples != n) starts.push_back(n - cfg.length_samples);
  return starts;
}

inline std::vector<Window> window(const Recording& rec, const WindowConfig& cfg) {
  std::vector<Window> out;
  for (auto start : window_starts(rec.n_samples(), cfg)) {
    Window w{rec.id, start, Tensor<float>({rec.n_channels(), cfg.length_samples})};
    for (std::size_t c = 0; c < rec.n_channels(); ++c) {
      const auto src = rec.signal.row(c);
      std::copy_n(src.begin() + std::ptrdiff_t(start), cfg.length_samples, w.data.row(c).begin());
    }
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace eegclip
