#include <catch_amalgamated.hpp>

#include <complex>
#include <random>

#include "eegclip/eegclip.hpp"
#include "oracles.hpp"

using namespace eegclip;
using cplx = std::complex<double>;

namespace {

Tensor<float> noise_windows(std::size_t b, std::size_t c, std::size_t l, std::uint64_t seed) {
  Tensor<float> x({b, c, l});
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> nd;
  for (auto& v : x.data) v = nd(rng);
  return x;
}

std::vector<cplx> naive_rfft(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<cplx> c(n / 2 + 1);
  for (std::size_t k = 0; k < c.size(); ++k)
    for (std::size_t t = 0; t < n; ++t)
      c[k] += x[t] * std::polar(1.0, -2 * oracle::kPi * double(k * t % n) / double(n));
  return c;
}

// Inverse of the real DFT for even n; imaginary parts of the DC and Nyquist
// bins do not contribute.
std::vector<double> naive_irfft(const std::vector<cplx>& c, std::size_t n) {
  std::vector<double> x(n);
  for (std::size_t t = 0; t < n; ++t) {
    double s = c[0].real() + (t % 2 ? -1.0 : 1.0) * c[n / 2].real();
    for (std::size_t k = 1; k < n / 2; ++k)
      s += 2 * (c[k] * std::polar(1.0, 2 * oracle::kPi * double(k * t % n) / double(n))).real();
    x[t] = s / double(n);
  }
  return x;
}

GradientMap uniform_map(std::size_t channels, std::size_t length, double rate) {
  GradientMap m;
  m.magnitudes = Tensor<double>({channels, length / 2 + 1}, 1.0);
  for (std::size_t k = 0; k <= length / 2; ++k) m.freq_axis_hz.push_back(double(k) * rate / double(length));
  for (std::size_t c = 0; c < channels; ++c) m.channel_names.push_back("C" + std::to_string(c));
  return m;
}

}  // namespace

TEST_CASE("band-pass similarity concentrates gradient mass in its passband") {
  oracle::BandPassSimilarity fn(3, 1200, oracle::bandpass_fir(4, 8, 100, 201), 1);
  const auto map = frequency_gradients(fn, noise_windows(6, 3, 1200, 2), 100, "p");
  REQUIRE(map.magnitudes.shape == std::vector<std::size_t>{3, 601});
  double inside = 0, total = 0;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t k = 0; k < 601; ++k) {
      total += map.magnitudes(c, k);
      if (std::abs(map.freq_axis_hz[k] - 6.0) <= 2.0) inside += map.magnitudes(c, k);
    }
  CHECK(inside / total >= 0.6);
  CHECK(map.freq_axis_hz.size() == 601);
  CHECK(map.freq_axis_hz.back() == Catch::Approx(50.0));
  CHECK(map.freq_axis_hz[12] == Catch::Approx(1.0));
  CHECK(map.n_windows_averaged == 6);
  CHECK(map.channel_names == std::vector<std::string>{"CH1", "CH2", "CH3"});
}

TEST_CASE("coefficient gradient matches finite differences over DFT coefficients") {
  const std::size_t n = 32;
  oracle::BandPassSimilarity fn(1, n, oracle::bandpass_fir(5, 20, 100, 9), 3);
  const auto x0 = noise_windows(1, 1, n, 4);
  const std::vector<double> x(x0.data.begin(), x0.data.end());
  const auto c0 = naive_rfft(x);

  const auto f_of_x = [&](const std::vector<double>& v) {
    Tensor<double> t({1, 1, n});
    t.data = v;
    return fn.value_and_grad(t, nullptr)[0];
  };
  Tensor<double> xt({1, 1, n});
  xt.data = x;
  Tensor<double> g;
  fn.value_and_grad(xt, &g);
  const auto analytic = coefficient_gradient(naive_rfft(g.data), n);

  // Coefficients packed as [Re c_0, Im c_0, Re c_1, ...].
  std::vector<double> packed;
  for (const auto& c : c0) {
    packed.push_back(c.real());
    packed.push_back(c.imag());
  }
  const auto f_of_c = [&](const std::vector<double>& p) {
    std::vector<cplx> c(p.size() / 2);
    for (std::size_t k = 0; k < c.size(); ++k) c[k] = {p[2 * k], p[2 * k + 1]};
    return f_of_x(naive_irfft(c, n));
  };
  double worst = 0;
  for (std::size_t k = 0; k < c0.size(); ++k) {
    const double re = oracle::central_difference(f_of_c, packed, 2 * k, 1e-5);
    const double im = oracle::central_difference(f_of_c, packed, 2 * k + 1, 1e-5);
    worst = std::max(worst, oracle::relative_error(analytic[k].real(), re, 1e-9));
    if (k != 0 && k != n / 2) worst = std::max(worst, oracle::relative_error(analytic[k].imag(), im, 1e-9));
  }
  CHECK(worst < 1e-4);

  // The map for one window is the modulus of that gradient.
  const auto map = frequency_gradients(fn, x0, 100, "p");
  for (std::size_t k = 0; k < c0.size(); ++k) CHECK(map.magnitudes(0, k) == Catch::Approx(std::abs(analytic[k])).epsilon(1e-9));
}

TEST_CASE("signed mode is the derivative along each coefficient's modulus") {
  const std::size_t n = 32;
  oracle::BandPassSimilarity fn(1, n, oracle::bandpass_fir(5, 20, 100, 9), 5);
  const auto x0 = noise_windows(1, 1, n, 6);
  const std::vector<double> x(x0.data.begin(), x0.data.end());
  const auto c0 = naive_rfft(x);
  const auto map = frequency_gradients(fn, x0, 100, "p", GradientMode::Signed);
  CHECK(map.mode == GradientMode::Signed);
  for (std::size_t k = 1; k < n / 2; ++k) {
    const auto f = [&](const std::vector<double>& r) {
      auto c = c0;
      c[k] = std::polar(r[0], std::arg(c0[k]));
      Tensor<double> t({1, 1, n});
      t.data = naive_irfft(c, n);
      return fn.value_and_grad(t, nullptr)[0];
    };
    const double fd = oracle::central_difference(f, {std::abs(c0[k])}, 0, 1e-6);
    CHECK(oracle::relative_error(map.magnitudes(0, k), fd, 1e-9) < 1e-4);
  }
}

TEST_CASE("gradient maps are deterministic and independent of window order") {
  oracle::BandPassSimilarity fn(2, 256, oracle::bandpass_fir(8, 12, 100, 51), 7);
  const auto w = noise_windows(5, 2, 256, 8);
  const auto a = frequency_gradients(fn, w, 100, "p", GradientMode::Magnitude, {}, 2);
  CHECK(frequency_gradients(fn, w, 100, "p", GradientMode::Magnitude, {}, 2).magnitudes == a.magnitudes);
  Tensor<float> rev(w.shape);
  for (std::size_t b = 0; b < 5; ++b) std::copy_n(w.ptr() + (4 - b) * 512, 512, rev.ptr() + b * 512);
  const auto r = frequency_gradients(fn, rev, 100, "p", GradientMode::Magnitude, {}, 3);
  for (std::size_t i = 0; i < a.magnitudes.size(); ++i)
    CHECK(r.magnitudes.data[i] == Catch::Approx(a.magnitudes.data[i]).epsilon(1e-12));
}

TEST_CASE("gradient input validation") {
  oracle::BandPassSimilarity fn(2, 64, oracle::bandpass_fir(8, 12, 100, 11), 9);
  CHECK_THROWS_AS(frequency_gradients(fn, noise_windows(1, 3, 64, 1), 100, "p"), ValidationError);
  CHECK_THROWS_AS(frequency_gradients(fn, noise_windows(1, 2, 63, 1), 100, "p"), ValidationError);
  CHECK_THROWS_AS(frequency_gradients(fn, Tensor<float>({0, 2, 64}), 100, "p"), ValidationError);
  CHECK_THROWS_AS(frequency_gradients(fn, noise_windows(1, 2, 64, 1), 0, "p"), ValidationError);
  CHECK(gradient_mode_from_name("signed") == GradientMode::Signed);
  CHECK_THROWS_AS(gradient_mode_from_name("phase"), ValidationError);
}

TEST_CASE("topographic aggregation") {
  const auto m = uniform_map(2, 1200, 100);
  // Bins are 1/12 Hz apart: [8, 13] holds 61 bins, (8, 13] holds 60.
  CHECK(topographic_aggregate(m, 8, 13) == std::vector<double>{61, 61});
  CHECK(topographic_aggregate(m, Band{8, 13, false}) == std::vector<double>{60, 60});

  oracle::BandPassSimilarity fn(3, 300, oracle::bandpass_fir(4, 30, 100, 31), 10);
  const auto g = frequency_gradients(fn, noise_windows(2, 3, 300, 11), 100, "p");
  const auto low = topographic_aggregate(g, Band{4, 8, true});
  const auto high = topographic_aggregate(g, Band{8, 13, false});
  const auto both = topographic_aggregate(g, Band{4, 13, true});
  const auto full = topographic_aggregate(g, 0, 50);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(low[c] + high[c] == Catch::Approx(both[c]).epsilon(1e-12));
    double row = 0;
    for (std::size_t k = 0; k < g.freq_axis_hz.size(); ++k) row += g.magnitudes(c, k);
    CHECK(full[c] == Catch::Approx(row).epsilon(1e-12));
  }
  CHECK_THROWS_AS(topographic_aggregate(g, 13, 8), ValidationError);
  CHECK_THROWS_AS(topographic_aggregate(g, 8, 8), ValidationError);
  CHECK_THROWS_AS(topographic_aggregate(g, -1, 8), ValidationError);
  CHECK_THROWS_AS(topographic_aggregate(g, 40, 60), ValidationError);
}

TEST_CASE("gradient map CSV lists every channel and bin") {
  const auto m = uniform_map(2, 8, 100);
  const auto csv = gradient_map_csv(m);
  CHECK(csv.rfind("channel,freq_hz,magnitude\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 2 * 5);
  CHECK(csv.find("C1,50,1\n") != std::string::npos);
}

TEST_CASE("model similarity gradient matches finite differences") {
  ModelSpec spec;
  spec.deep4.n_channels = 2;
  spec.deep4.input_samples = 64;
  spec.deep4.block_filters = {3, 3, 3, 3};
  spec.deep4.temporal_kernel = 3;
  spec.deep4.pool_size = 2;
  spec.deep4.pool_stride = 2;
  spec.deep4.embedding_dim = 8;
  spec.shared_dim = 4;
  spec.text.output_dim = 16;
  ClipModel<float> model(spec, nullptr);
  model.init(12);
  ClipPromptSimilarity fn(model, "This is an abnormal recording");
  CHECK(fn.n_channels() == 2);
  CHECK(fn.window_length() == 64);

  const auto wf = noise_windows(2, 2, 64, 13);
  Tensor<double> x = wf.cast<double>();
  Tensor<double> g;
  const auto values = fn.value_and_grad(x, &g);
  REQUIRE(g.shape == x.shape);
  for (double v : values) CHECK(std::abs(v) <= 1.0 + 1e-9);

  // Per-window values, so the gradient of their sum is the stacked gradients.
  const auto f = [&](const std::vector<double>& v) {
    Tensor<double> t(x.shape);
    t.data = v;
    const auto out = fn.value_and_grad(t, nullptr);
    return out[0] + out[1];
  };
  double num = 0, den = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double fd = oracle::central_difference(f, x.data, i, 1e-6);
    num += (fd - g.data[i]) * (fd - g.data[i]);
    den += fd * fd;
  }
  CHECK(std::sqrt(num / den) < 1e-4);

  // Value agrees with the float model's projections.
  const auto p = model.project_eeg(wf);
  const auto t = model.project_text({"This is an abnormal recording"});
  double cos0 = 0;
  for (std::size_t j = 0; j < 4; ++j) cos0 += double(p(0, j)) * double(t(0, j));
  CHECK(values[0] == Catch::Approx(cos0).margin(1e-5));
}
