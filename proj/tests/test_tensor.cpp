#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "resprop/ops.hpp"
#include "resprop/rng.hpp"
#include "resprop/tensor.hpp"

using namespace resprop;

namespace {

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// independent oracle: naive triple loop
Tensor<double> matmul_oracle(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t n = a.extent(0), k = a.extent(1), m = b.extent(1);
  Tensor<double> c({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a(i, p) * b(p, j);
      c(i, j) = acc;
    }
  return c;
}

// independent oracle: direct 6-loop convolution over the padded input
Tensor<double> conv2d_oracle(const Tensor<double>& x, const Tensor<double>& k, std::size_t stride,
                             Padding padding) {
  const ConvGeometry g = conv_geometry(x.shape(), k.shape(), stride, padding);
  const std::size_t n = x.extent(0);
  Tensor<double> y({n, g.h_out, g.w_out, g.cout});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oh = 0; oh < g.h_out; ++oh)
      for (std::size_t ow = 0; ow < g.w_out; ++ow)
        for (std::size_t co = 0; co < g.cout; ++co) {
          double acc = 0.0;
          for (std::size_t ky = 0; ky < g.kh; ++ky)
            for (std::size_t kx = 0; kx < g.kw; ++kx)
              for (std::size_t ci = 0; ci < g.cin; ++ci) {
                const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + ky) -
                                          static_cast<std::ptrdiff_t>(g.pad_top);
                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride + kx) -
                                          static_cast<std::ptrdiff_t>(g.pad_left);
                if (ih < 0 || iw < 0 || ih >= static_cast<std::ptrdiff_t>(g.h_in) ||
                    iw >= static_cast<std::ptrdiff_t>(g.w_in))
                  continue;
                acc += x(b, static_cast<std::size_t>(ih), static_cast<std::size_t>(iw), ci) *
                       k(ky, kx, ci, co);
              }
          y(b, oh, ow, co) = acc;
        }
  return y;
}

}  // namespace

TEST_CASE("gaussian moments at a million samples") {
  Rng rng(7);
  Tensor<double> t = gaussian<double>({1000000}, 0.0, 1.0, rng);
  CHECK(std::abs(mean_of(t)) < 0.005);
  CHECK(std::abs(variance_of(t) - 1.0) < 0.01);
}

TEST_CASE("gaussian with zero std is the constant mean") {
  Rng rng(3);
  Tensor<double> t = gaussian<double>({100}, 2.5, 0.0, rng);
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == 2.5);
}

TEST_CASE("gaussian is seed-deterministic bit for bit") {
  Rng a(42), b(42);
  Tensor<double> ta = gaussian<double>({1000}, 0.0, 1.0, a);
  Tensor<double> tb = gaussian<double>({1000}, 0.0, 1.0, b);
  for (std::size_t i = 0; i < ta.size(); ++i) CHECK(ta[i] == tb[i]);

  Tensor<float> f1 = gaussian<float>({64}, 0.5, 2.0, a);
  Rng c(42);
  gaussian<double>({1000}, 0.0, 1.0, c);
  Tensor<float> f2 = gaussian<float>({64}, 0.5, 2.0, c);
  for (std::size_t i = 0; i < f1.size(); ++i) CHECK(f1[i] == f2[i]);
}

TEST_CASE("gaussian rejects bad moments") {
  Rng rng(0);
  CHECK_THROWS_AS(gaussian<double>({4}, 0.0, -1.0, rng), std::invalid_argument);
  CHECK_THROWS_AS(gaussian<double>({4}, std::nan(""), 1.0, rng), std::invalid_argument);
  CHECK_THROWS_AS(gaussian<double>({4}, 0.0, INFINITY, rng), std::invalid_argument);
}

TEST_CASE("matmul by the identity") {
  Tensor<double> eye({2, 2});
  eye(0, 0) = eye(1, 1) = 1.0;
  Tensor<double> b({2, 3});
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = static_cast<double>(i) - 2.0;
  Tensor<double> c = matmul(eye, b);
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(c[i] == b[i]);
}

TEST_CASE("matmul hand arithmetic") {
  Tensor<double> a({2, 2});
  a(0, 0) = 1;
  a(0, 1) = 2;
  a(1, 0) = 3;
  a(1, 1) = 4;
  Tensor<double> b({2, 1});
  b(0, 0) = 5;
  b(1, 0) = 6;
  Tensor<double> c = matmul(a, b);
  CHECK(c(0, 0) == doctest::Approx(17.0));
  CHECK(c(1, 0) == doctest::Approx(39.0));
}

TEST_CASE("matmul matches the triple-loop oracle") {
  Rng rng(11);
  Tensor<double> a = gaussian<double>({7, 5}, 0.0, 1.0, rng);
  Tensor<double> b = gaussian<double>({5, 3}, 0.0, 1.0, rng);
  Tensor<double> got = matmul(a, b);
  Tensor<double> want = matmul_oracle(a, b);
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(rel_err(got[i], want[i]) <= 1e-12);
}

TEST_CASE("matmul oracle equivalence on random small extents") {
  Rng rng(1234);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.next_below(16), k = 1 + rng.next_below(16),
                      m = 1 + rng.next_below(16);
    Tensor<double> a = gaussian<double>({n, k}, 0.0, 1.0, rng);
    Tensor<double> b = gaussian<double>({k, m}, 0.0, 1.0, rng);
    Tensor<double> got = matmul(a, b);
    Tensor<double> want = matmul_oracle(a, b);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(rel_err(got[i], want[i]) <= 1e-12);
  }
}

TEST_CASE("matmul rejects shape mismatch") {
  Tensor<double> a({2, 3}), b({2, 3});
  CHECK_THROWS_AS(matmul(a, b), std::invalid_argument);
}

TEST_CASE("conv2d 1x1 kernel is a pointwise scale") {
  Rng rng(5);
  Tensor<double> x = gaussian<double>({2, 4, 4, 1}, 0.0, 1.0, rng);
  Tensor<double> k({1, 1, 1, 1});
  k[0] = 2.5;
  Tensor<double> y = conv2d(x, k, 1, Padding::Same);
  REQUIRE(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == doctest::Approx(2.5 * x[i]));
}

TEST_CASE("same padding with stride 2 uses the fixed rule") {
  // 5x5 input, 3x3 kernel, stride 2: pad_total 2 split as (1, 1), output 3x3
  ConvGeometry g = conv_geometry({1, 5, 5, 1}, {3, 3, 1, 1}, 2, Padding::Same);
  CHECK(g.pad_top == 1);
  CHECK(g.pad_bottom == 1);
  CHECK(g.pad_left == 1);
  CHECK(g.pad_right == 1);
  CHECK(g.h_out == 3);
  CHECK(g.w_out == 3);

  // even kernel: pad_total 3 split as (1, 2)
  ConvGeometry e = conv_geometry({1, 6, 6, 1}, {4, 4, 1, 1}, 2, Padding::Same);
  CHECK(e.pad_top == 1);
  CHECK(e.pad_bottom == 2);
}

TEST_CASE("conv2d matches the 6-loop oracle") {
  Rng rng(21);
  Tensor<double> x = gaussian<double>({1, 8, 8, 2}, 0.0, 1.0, rng);
  Tensor<double> k = gaussian<double>({3, 3, 2, 4}, 0.0, 0.5, rng);
  for (const Padding padding : {Padding::Same, Padding::Valid}) {
    for (const std::size_t stride : {std::size_t(1), std::size_t(2)}) {
      Tensor<double> got = conv2d(x, k, stride, padding);
      Tensor<double> want = conv2d_oracle(x, k, stride, padding);
      REQUIRE(got.shape() == want.shape());
      for (std::size_t i = 0; i < got.size(); ++i) CHECK(rel_err(got[i], want[i]) <= 1e-12);
    }
  }
}

TEST_CASE("conv2d rejects a kernel larger than the padded input") {
  CHECK_THROWS_AS(conv_geometry({1, 2, 2, 1}, {5, 5, 1, 1}, 1, Padding::Valid),
                  std::invalid_argument);
  CHECK_THROWS_AS(conv_geometry({1, 4, 4, 2}, {3, 3, 1, 1}, 1, Padding::Same),
                  std::invalid_argument);  // channel mismatch
  CHECK_THROWS_AS(conv_geometry({1, 4, 4, 1}, {3, 3, 1, 1}, 0, Padding::Same),
                  std::invalid_argument);  // stride < 1
}

TEST_CASE("relu basics") {
  Tensor<double> x({3});
  x[0] = -1.0;
  x[1] = 0.0;
  x[2] = 2.0;
  Tensor<double> y = relu(x);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 2.0);

  Tensor<double> neg({4}, -3.0);
  Tensor<double> zeroed = relu(neg);
  for (std::size_t i = 0; i < zeroed.size(); ++i) CHECK(zeroed[i] == 0.0);
}

TEST_CASE("relu zeroes about half of standard normal input") {
  Rng rng(17);
  Tensor<double> x = gaussian<double>({1000000}, 0.0, 1.0, rng);
  Tensor<double> y = relu(x);
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < y.size(); ++i) zeros += y[i] == 0.0;
  const double fraction = static_cast<double>(zeros) / static_cast<double>(y.size());
  CHECK(std::abs(fraction - 0.5) < 0.01);
}

TEST_CASE("channel moments of simple tensors") {
  Tensor<double> constant({4, 3}, 3.0);
  auto m = channel_moments(constant);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(m.mean[c] == 3.0);
    CHECK(m.var[c] == 0.0);
  }

  Tensor<double> two({2, 2});
  two(0, 0) = 1.0;
  two(0, 1) = 1.0;
  two(1, 0) = 3.0;
  two(1, 1) = 3.0;
  auto m2 = channel_moments(two);
  CHECK(m2.mean[0] == doctest::Approx(2.0));
  CHECK(m2.var[0] == doctest::Approx(1.0));
}

TEST_CASE("channel moments match a two-pass oracle") {
  Rng rng(33);
  Tensor<double> x = gaussian<double>({6, 5, 4, 3}, 1.0, 2.0, rng);
  auto m = channel_moments(x);
  const std::size_t c = 3, z = x.size() / c;
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0.0;
    for (std::size_t i = 0; i < z; ++i) sum += x[i * c + ch];
    const double mean = sum / static_cast<double>(z);
    double sq = 0.0;
    for (std::size_t i = 0; i < z; ++i) sq += (x[i * c + ch] - mean) * (x[i * c + ch] - mean);
    const double var = sq / static_cast<double>(z);
    CHECK(rel_err(m.mean[ch], mean) <= 1e-12);
    CHECK(rel_err(m.var[ch], var) <= 1e-12);
  }
}

TEST_CASE("channel moments satisfy var = E[x^2] - E[x]^2 and var >= 0") {
  Rng rng(44);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor<double> x = gaussian<double>({8, 6}, rng.gaussian(), 0.5 + rng.uniform(), rng);
    auto m = channel_moments(x);
    const std::size_t c = 6, z = x.size() / c;
    for (std::size_t ch = 0; ch < c; ++ch) {
      CHECK(m.var[ch] >= 0.0);
      double sq = 0.0, sum = 0.0;
      for (std::size_t i = 0; i < z; ++i) {
        sq += x[i * c + ch] * x[i * c + ch];
        sum += x[i * c + ch];
      }
      const double mean = sum / static_cast<double>(z);
      CHECK(rel_err(m.var[ch], sq / static_cast<double>(z) - mean * mean) <= 1e-10);
    }
  }
}

TEST_CASE("softmax cross entropy") {
  SUBCASE("uniform logits give ln K") {
    Tensor<double> logits({4, 10}, 0.3);
    std::vector<int> labels{0, 3, 7, 9};
    auto res = softmax_xent(logits, std::span<const int>(labels));
    CHECK(res.loss == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  }
  SUBCASE("huge true logit is stable") {
    Tensor<double> logits({1, 4});
    logits(0, 2) = 1000.0;
    std::vector<int> labels{2};
    auto res = softmax_xent(logits, std::span<const int>(labels));
    CHECK(std::isfinite(res.loss));
    CHECK(res.loss < 1e-6);
  }
  SUBCASE("out-of-range label is rejected") {
    Tensor<double> logits({1, 3});
    std::vector<int> labels{3};
    CHECK_THROWS_AS(softmax_xent(logits, std::span<const int>(labels)), std::invalid_argument);
  }
}

TEST_CASE("tensor shape accounting") {
  Tensor<double> t({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.rank() == 3);
  CHECK_THROWS_AS(Tensor<double>({2, 0, 4}), std::invalid_argument);
  CHECK_THROWS_AS(t.reshaped({5, 5}), std::invalid_argument);
  Tensor<double> r = t.reshaped({6, 4});
  CHECK(r.extent(0) == 6);
}

TEST_CASE("rng uniform range and shuffle determinism") {
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  std::vector<int> a{1, 2, 3, 4, 5, 6, 7, 8}, b = a;
  Rng r1(5), r2(5);
  shuffle(a, r1);
  shuffle(b, r2);
  CHECK(a == b);
}
