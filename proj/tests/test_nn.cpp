#include <catch_amalgamated.hpp>

#include <random>

#include "eegclip/nn.hpp"
#include "eegclip/optim.hpp"
#include "oracles.hpp"

using namespace eegclip;
using Td = Tensor<double>;

namespace {

Td random_tensor(std::vector<std::size_t> shape, std::uint64_t seed, double scale = 1.0) {
  Td t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0, scale);
  for (auto& v : t.data) v = nd(rng);
  return t;
}

double weighted_sum(const Td& y, const Td& w) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.data[i] * w.data[i];
  return s;
}

// ||a - b|| / ||b||
double rel_norm_error(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / std::max(den, 1e-300));
}

// Finite-difference gradient of `loss` with respect to every entry of `x`.
std::vector<double> numeric_grad(Td& x, const std::function<double()>& loss, double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x.data[i];
    x.data[i] = v + h;
    const double up = loss();
    x.data[i] = v - h;
    const double down = loss();
    x.data[i] = v;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

}  // namespace

TEST_CASE("linear layer gradients") {
  Rng rng(1);
  nn::Linear<double> lin("l", 5, 3);
  lin.init_default(rng);
  auto x = random_tensor({4, 5}, 2);
  const auto w = random_tensor({4, 3}, 3);
  const auto loss = [&] { return weighted_sum(lin.forward(x), w); };
  nn::zero_grads<double>({&lin.weight, &lin.bias});
  const auto dx = lin.backward(x, w);
  CHECK(rel_norm_error(dx.data, numeric_grad(x, loss)) < 1e-7);
  CHECK(rel_norm_error(lin.weight.grad.data, numeric_grad(lin.weight.value, loss)) < 1e-7);
  CHECK(rel_norm_error(lin.bias.grad.data, numeric_grad(lin.bias.value, loss)) < 1e-7);
  CHECK_THROWS_AS(lin.forward(random_tensor({4, 6}, 4)), ValidationError);
}

TEST_CASE("conv1d gradients and direct-sum oracle") {
  Rng rng(5);
  nn::Conv1d<double> conv("c", 3, 4, 5, true);
  conv.init_xavier(rng);
  for (auto& b : conv.bias.value.data) b = 0.3;
  auto x = random_tensor({3, 2, 20}, 6);  // [Cin][B][T]
  const auto y = conv.forward(x, nullptr);
  REQUIRE(y.shape == std::vector<std::size_t>{4, 2, 16});
  // y[o][b][t] = bias + sum_{c,k} W[o][c*K+k] x[c][b][t+k]
  for (std::size_t o = 0; o < 4; ++o)
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t t = 0; t < 16; ++t) {
        double s = 0.3;
        for (std::size_t c = 0; c < 3; ++c)
          for (std::size_t k = 0; k < 5; ++k) s += conv.weight.value(o, c * 5 + k) * x(c, b, t + k);
        CHECK(y(o, b, t) == Catch::Approx(s).epsilon(1e-12));
      }
  const auto w = random_tensor(y.shape, 7);
  const auto loss = [&] { return weighted_sum(conv.forward(x, nullptr), w); };
  nn::ConvCache<double> cache;
  conv.forward(x, &cache);
  nn::zero_grads<double>({&conv.weight, &conv.bias});
  const auto dx = conv.backward(cache, w, true);
  CHECK(rel_norm_error(dx.data, numeric_grad(x, loss)) < 1e-7);
  CHECK(rel_norm_error(conv.weight.grad.data, numeric_grad(conv.weight.value, loss)) < 1e-7);
  CHECK(rel_norm_error(conv.bias.grad.data, numeric_grad(conv.bias.value, loss)) < 1e-7);
}

TEST_CASE("split temporal-spatial convolution equals the two-step composition") {
  Rng rng(8);
  nn::SplitTemporalSpatialConv<double> conv("b", 3, 4, 5);
  conv.init_xavier(rng);
  for (auto& v : conv.time_bias.value.data) v = 0.1;
  auto x = random_tensor({3, 2, 12}, 9);
  const auto y = conv.forward(x, nullptr);
  // Temporal conv per filter g on every electrode, then spatial mix.
  for (std::size_t f = 0; f < 4; ++f)
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t t = 0; t < 8; ++t) {
        double s = 0;
        for (std::size_t g = 0; g < 4; ++g)
          for (std::size_t c = 0; c < 3; ++c) {
            double tmp = conv.time_bias.value.data[g];
            for (std::size_t k = 0; k < 5; ++k) tmp += conv.time_weight.value(g, k) * x(c, b, t + k);
            s += conv.spat_weight.value(f, g, c) * tmp;
          }
        CHECK(y(f, b, t) == Catch::Approx(s).epsilon(1e-12));
      }
  const auto w = random_tensor(y.shape, 10);
  const auto loss = [&] { return weighted_sum(conv.forward(x, nullptr), w); };
  nn::ConvCache<double> cache;
  conv.forward(x, &cache);
  nn::zero_grads<double>({&conv.time_weight, &conv.time_bias, &conv.spat_weight});
  const auto dx = conv.backward(cache, w, true);
  CHECK(rel_norm_error(dx.data, numeric_grad(x, loss)) < 1e-7);
  CHECK(rel_norm_error(conv.time_weight.grad.data, numeric_grad(conv.time_weight.value, loss)) < 1e-7);
  CHECK(rel_norm_error(conv.time_bias.grad.data, numeric_grad(conv.time_bias.value, loss)) < 1e-7);
  CHECK(rel_norm_error(conv.spat_weight.grad.data, numeric_grad(conv.spat_weight.value, loss)) < 1e-7);
}

TEST_CASE("batch norm gradients in both modes") {
  for (auto mode : {nn::Mode::Train, nn::Mode::Eval}) {
    nn::BatchNorm<double> bn("bn", 3);
    bn.gamma.value.data = {1.5, 0.5, -0.7};
    bn.beta.value.data = {0.1, -0.2, 0.3};
    bn.running_mean.value.data = {0.2, -0.1, 0.0};
    bn.running_var.value.data = {1.3, 0.7, 2.0};
    auto x = random_tensor({3, 4, 6}, 11, 2.0);
    const auto w = random_tensor(x.shape, 12);
    const auto loss = [&] { return weighted_sum(bn.forward(x, mode, nullptr), w); };
    nn::BatchNormCache<double> cache;
    bn.forward(x, mode, &cache);
    nn::zero_grads<double>({&bn.gamma, &bn.beta});
    const auto dx = bn.backward(cache, w);
    CHECK(rel_norm_error(dx.data, numeric_grad(x, loss)) < 1e-6);
    CHECK(rel_norm_error(bn.gamma.grad.data, numeric_grad(bn.gamma.value, loss)) < 1e-6);
    CHECK(rel_norm_error(bn.beta.grad.data, numeric_grad(bn.beta.value, loss)) < 1e-6);
  }
}

TEST_CASE("batch norm training output has zero mean and unit variance per channel") {
  nn::BatchNorm<double> bn("bn", 2);
  const auto x = random_tensor({2, 8, 10}, 13, 5.0);
  nn::BatchNormCache<double> cache;
  const auto y = bn.forward(x, nn::Mode::Train, &cache);
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < 80; ++i) m += y.data[c * 80 + i];
    m /= 80;
    for (std::size_t i = 0; i < 80; ++i) v += (y.data[c * 80 + i] - m) * (y.data[c * 80 + i] - m);
    CHECK(std::abs(m) < 1e-12);
    CHECK(v / 80 == Catch::Approx(1.0).epsilon(1e-4));
  }
  bn.update_running(cache);
  CHECK(bn.running_mean.value.data[0] == Catch::Approx(0.1 * cache.batch_mean[0]));
}

TEST_CASE("pointwise layers, pooling and normalisation gradients") {
  auto x = random_tensor({2, 3, 9}, 14);
  const auto w = random_tensor({2, 3, 9}, 15);

  SECTION("elu") {
    const auto loss = [&] { return weighted_sum(nn::elu_forward(x), w); };
    const auto dx = nn::elu_backward(nn::elu_forward(x), w);
    CHECK(rel_norm_error(dx.data, numeric_grad(x, loss)) < 1e-7);
  }
  SECTION("max pool") {
    const auto wp = random_tensor({2, 3, 3}, 16);
    const auto loss = [&] { return weighted_sum(nn::maxpool_forward<double>(x, 3, 3, nullptr), wp); };
    nn::PoolCache<double> cache;
    nn::maxpool_forward(x, 3, 3, &cache);
    const auto dx = nn::maxpool_backward(cache, wp);
    CHECK(rel_norm_error(dx.data, numeric_grad(x, loss)) < 1e-7);
    CHECK(nn::pooled_length(1191, 3, 3) == 397);
  }
  SECTION("l2 normalisation") {
    auto m = random_tensor({4, 5}, 17);
    const auto wm = random_tensor({4, 5}, 18);
    const auto loss = [&] { return weighted_sum(nn::l2_normalize_rows(m), wm); };
    std::vector<double> norms;
    const auto y = nn::l2_normalize_rows(m, &norms);
    const auto dx = nn::l2_normalize_backward(y, norms, wm);
    CHECK(rel_norm_error(dx.data, numeric_grad(m, loss)) < 1e-7);
  }
  SECTION("dropout keeps expectation") {
    Rng rng(19);
    Td ones({1, 100000}, 1.0);
    std::vector<double> mask;
    const auto y = nn::dropout_forward(ones, 0.5, rng, mask);
    double mean = 0;
    for (double v : y.data) mean += v;
    CHECK(mean / 100000 == Catch::Approx(1.0).margin(0.02));
  }
}

TEST_CASE("adam step matches a hand-computed update") {
  nn::Param<double> p("p", {2});
  p.value.data = {1.0, -2.0};
  Adam<double> opt(0.1);
  opt.add_group({&p}, 0.5, 0.01);
  p.grad.data = {0.3, -0.4};
  opt.step();
  // First step: m_hat = g', v_hat = g'^2 with g' = g + wd * w, so the update is lr*scale*sign.
  for (std::size_t i = 0; i < 2; ++i) {
    const double w0 = i == 0 ? 1.0 : -2.0, g = (i == 0 ? 0.3 : -0.4) + 0.01 * w0;
    CHECK(p.value.data[i] == Catch::Approx(w0 - 0.05 * g / (std::abs(g) + 1e-8)).epsilon(1e-12));
  }
  opt.zero_grad();
  CHECK(p.grad.data == std::vector<double>{0.0, 0.0});

  nn::Param<double> frozen("f", {1});
  frozen.value.data = {3.0};
  Adam<double> none(0.1);
  none.add_group({&frozen}, 0.0, 0.5);
  frozen.grad.data = {1.0};
  none.step();
  CHECK(frozen.value.data[0] == 3.0);
}

TEST_CASE("learning-rate schedule") {
  CHECK(scheduled_lr(1.0, 0, 100, 10, true) == Catch::Approx(0.1));
  CHECK(scheduled_lr(1.0, 9, 100, 10, true) == Catch::Approx(1.0));
  CHECK(scheduled_lr(1.0, 10, 100, 10, true) == Catch::Approx(1.0));
  CHECK(scheduled_lr(1.0, 55, 100, 10, true) == Catch::Approx(0.5));
  CHECK(scheduled_lr(1.0, 99, 100, 10, false) == 1.0);
  CHECK(scheduled_lr(2.0, 5, 100, 0, false) == 2.0);
}
