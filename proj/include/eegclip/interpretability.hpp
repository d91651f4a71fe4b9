#pragma once

// Gradients of EEG/prompt cosine similarity with respect to the windows'
// real-DFT coefficients, averaged over windows, plus per-electrode band sums.

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <memory>
#include <string>
#include <vector>

#include "eegclip/contrastive.hpp"
#include "eegclip/data_io.hpp"
#include "eegclip/errors.hpp"
#include "eegclip/tensor.hpp"

namespace eegclip {

// A differentiable scalar f(window). Windows are [B][C][L]; returns f for
// each window and writes df/dwindow (same shape) into `grad`.
class SimilarityFunction {
 public:
  virtual ~SimilarityFunction() = default;
  virtual std::size_t n_channels() const = 0;
  virtual std::size_t window_length() const = 0;
  virtual std::vector<double> value_and_grad(const Tensor<double>& windows, Tensor<double>* grad) = 0;
};

// cos(project_eeg(window), project_text(prompt)) through a trained model, in
// double precision and inference mode.
class ClipPromptSimilarity final : public SimilarityFunction {
 public:
  ClipPromptSimilarity(const ClipModel<float>& model, const std::string& prompt)
      : model_(model.cast<double>()) {
    const auto t = model.project_text({prompt});
    text_.assign(t.data.begin(), t.data.end());
  }

  std::size_t n_channels() const override { return model_.spec().deep4.n_channels; }
  std::size_t window_length() const override { return model_.spec().deep4.input_samples; }

  std::vector<double> value_and_grad(const Tensor<double>& windows, Tensor<double>* grad) override {
    Deep4Cache<double> ec;
    const auto emb = model_.eeg.forward(windows, Mode::Eval, &ec, nullptr);
    HeadCache<double> hc;
    std::vector<double> norms;
    const auto y = nn::l2_normalize_rows(model_.eeg_head.forward(emb, &hc), &norms);
    std::vector<double> f(y.dim(0));
    Tensor<double> dy(y.shape);
    for (std::size_t b = 0; b < y.dim(0); ++b) {
      f[b] = dot<double>(y.row(b), text_);
      std::copy(text_.begin(), text_.end(), dy.row(b).begin());
    }
    if (grad) {
      const auto d_emb = model_.eeg_head.backward(hc, nn::l2_normalize_backward(y, norms, dy));
      *grad = model_.eeg.backward(ec, d_emb, true);
    }
    return f;
  }

 private:
  ClipModel<double> model_;
  std::vector<double> text_;
};

enum class GradientMode { Magnitude, Signed };

inline GradientMode gradient_mode_from_name(std::string_view s) {
  if (s == "magnitude") return GradientMode::Magnitude;
  if (s == "signed") return GradientMode::Signed;
  throw ValidationError("unknown gradient mode '" + std::string(s) + "'");
}

struct GradientMap {
  Tensor<double> magnitudes;  // [channels x bins]
  std::vector<double> freq_axis_hz;
  std::vector<std::string> channel_names;
  std::string prompt;
  std::size_t n_windows_averaged = 0;
  GradientMode mode = GradientMode::Magnitude;
};

namespace detail {

// Real-input DFT of every row of a [rows x n] buffer.
class RealDft {
 public:
  explicit RealDft(std::size_t n) : n_(n), in_(n), out_(n / 2 + 1) {
    plan_ = fftw_plan_dft_r2c_1d(int(n), in_.data(), reinterpret_cast<fftw_complex*>(out_.data()),
                                 FFTW_ESTIMATE);
    if (!plan_) throw Error("FFTW plan creation failed");
  }
  ~RealDft() { fftw_destroy_plan(plan_); }
  RealDft(const RealDft&) = delete;
  RealDft& operator=(const RealDft&) = delete;

  const std::vector<std::complex<double>>& operator()(const double* x) {
    std::copy_n(x, n_, in_.begin());
    fftw_execute(plan_);
    return out_;
  }

 private:
  std::size_t n_;
  std::vector<double> in_;
  std::vector<std::complex<double>> out_;
  fftw_plan plan_;
};

}  // namespace detail

// For x = irfft(c), df/dc_k (as a complex number whose parts are the
// derivatives w.r.t. Re c_k and Im c_k) = (w_k / n) * rfft(df/dx)_k, with
// w_k = 1 for the DC and Nyquist bins and 2 otherwise.
inline std::vector<std::complex<double>> coefficient_gradient(
    const std::vector<std::complex<double>>& rfft_of_input_grad, std::size_t n) {
  std::vector<std::complex<double>> g(rfft_of_input_grad.size());
  for (std::size_t k = 0; k < g.size(); ++k) {
    const bool edge = k == 0 || (n % 2 == 0 && k == n / 2);
    g[k] = rfft_of_input_grad[k] * ((edge ? 1.0 : 2.0) / double(n));
  }
  return g;
}

// Averages per-bin gradient magnitudes over all windows (in order).
// Signed mode averages d f / d|c_k| at fixed phase instead.
inline GradientMap frequency_gradients(SimilarityFunction& fn, const Tensor<float>& windows,
                                       double rate_hz, const std::string& prompt,
                                       GradientMode mode = GradientMode::Magnitude,
                                       std::vector<std::string> channel_names = {},
                                       std::size_t batch_size = 16) {
  if (windows.rank() != 3 || windows.dim(0) == 0)
    throw ValidationError("frequency_gradients needs a nonempty [B x C x L] window batch");
  const std::size_t B = windows.dim(0), C = windows.dim(1), L = windows.dim(2);
  if (C != fn.n_channels() || L != fn.window_length())
    throw ValidationError("window shape " + shape_str(windows.shape) + " does not match the model");
  if (!(rate_hz > 0)) throw ValidationError("rate_hz must be positive");
  const std::size_t bins = L / 2 + 1;

  GradientMap map;
  map.magnitudes = Tensor<double>({C, bins});
  map.prompt = prompt;
  map.mode = mode;
  map.n_windows_averaged = B;
  map.channel_names = std::move(channel_names);
  if (map.channel_names.empty())
    for (std::size_t c = 0; c < C; ++c) map.channel_names.push_back("CH" + std::to_string(c + 1));
  for (std::size_t k = 0; k < bins; ++k) map.freq_axis_hz.push_back(double(k) * rate_hz / double(L));

  detail::RealDft dft_grad(L), dft_x(L);
  for (std::size_t b0 = 0; b0 < B; b0 += batch_size) {
    const std::size_t nb = std::min(B, b0 + batch_size) - b0;
    Tensor<double> x({nb, C, L});
    for (std::size_t i = 0; i < x.size(); ++i) x.data[i] = windows.data[b0 * C * L + i];
    Tensor<double> g;
    fn.value_and_grad(x, &g);
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t c = 0; c < C; ++c) {
        const auto cg = coefficient_gradient(dft_grad(g.ptr() + (b * C + c) * L), L);
        if (mode == GradientMode::Magnitude) {
          for (std::size_t k = 0; k < bins; ++k) map.magnitudes(c, k) += std::abs(cg[k]);
        } else {
          const auto& cx = dft_x(x.ptr() + (b * C + c) * L);
          for (std::size_t k = 0; k < bins; ++k) {
            const double a = std::abs(cx[k]);
            if (a > 0) map.magnitudes(c, k) += (std::conj(cx[k] / a) * cg[k]).real();
          }
        }
      }
  }
  for (auto& v : map.magnitudes.data) v /= double(B);
  return map;
}

struct Band {
  double low = 0, high = 0;
  bool low_inclusive = true;  // high is always inclusive

  bool contains(double f) const { return (low_inclusive ? f >= low : f > low) && f <= high; }
};

// Per-channel sum of the map over bins inside the band.
inline std::vector<double> topographic_aggregate(const GradientMap& map, const Band& band) {
  const double nyquist = map.freq_axis_hz.empty() ? 0.0 : map.freq_axis_hz.back();
  if (!(band.low >= 0) || !(band.low < band.high) || band.high > nyquist + 1e-9)
    throw ValidationError("invalid band [" + detail::format_double(band.low) + ", " +
                          detail::format_double(band.high) + "] Hz for Nyquist " +
                          detail::format_double(nyquist) + " Hz");
  std::vector<double> out(map.magnitudes.dim(0), 0.0);
  for (std::size_t c = 0; c < out.size(); ++c)
    for (std::size_t k = 0; k < map.freq_axis_hz.size(); ++k)
      if (band.contains(map.freq_axis_hz[k])) out[c] += map.magnitudes(c, k);
  return out;
}

inline std::vector<double> topographic_aggregate(const GradientMap& map, double low_hz, double high_hz) {
  return topographic_aggregate(map, Band{low_hz, high_hz, true});
}

inline std::string gradient_map_csv(const GradientMap& map) {
  std::string out = "channel,freq_hz,magnitude\n";
  char buf[96];
  for (std::size_t c = 0; c < map.magnitudes.dim(0); ++c)
    for (std::size_t k = 0; k < map.freq_axis_hz.size(); ++k) {
      std::snprintf(buf, sizeof buf, ",%.6g,%.9g\n", map.freq_axis_hz[k], map.magnitudes(c, k));
      out += map.channel_names[c] + buf;
    }
  return out;
}

}  // namespace eegclip
