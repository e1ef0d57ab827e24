#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "resprop/layers.hpp"
#include "resprop/ops.hpp"

using namespace resprop;

namespace {

Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double mean = 0.0,
                             double std = 1.0) {
  Rng rng(seed);
  return gaussian<double>(std::move(shape), mean, std, rng);
}

}  // namespace

TEST_CASE("batchnorm train output is standardized per channel") {
  const double eps = 1e-5;
  BatchNorm<double> bn(6, eps);
  Tensor<double> x = random_tensor({64, 6}, 1, 2.0, 3.0);
  Rng rng(0);
  Tensor<double> y = bn.forward(x, Mode::Train, rng);

  auto in_moments = channel_moments(x);
  auto moments = channel_moments(y);
  for (std::size_t c = 0; c < 6; ++c) {
    CHECK(std::abs(moments.mean[c]) <= 1e-6);
    const double target = in_moments.var[c] / (in_moments.var[c] + eps);
    CHECK(moments.var[c] <= target * (1.0 + 1e-12));
    CHECK(moments.var[c] >= (1.0 - 10.0 * eps) * target);
  }
}

TEST_CASE("batchnorm of a constant channel returns beta") {
  BatchNorm<double> bn(3);
  bn.beta().value[0] = -1.5;
  bn.beta().value[1] = 0.25;
  bn.beta().value[2] = 4.0;
  Tensor<double> x({10, 3});
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t c = 0; c < 3; ++c) x(i, c) = 7.0 + static_cast<double>(c);
  Rng rng(0);
  Tensor<double> y = bn.forward(x, Mode::Train, rng);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t c = 0; c < 3; ++c) CHECK(y(i, c) == doctest::Approx(bn.beta().value[c]));
}

TEST_CASE("ghost groups normalize independently") {
  Tensor<double> x = random_tensor({128, 4}, 7, 0.5, 2.0);
  BatchNorm<double> ghosted(4, 1e-5, 0.9, 64);
  Rng rng(0);
  Tensor<double> y = ghosted.forward(x, Mode::Train, rng);

  // reference: two fresh layers, one per contiguous half
  for (int half = 0; half < 2; ++half) {
    BatchNorm<double> solo(4);
    Tensor<double> part({64, 4});
    for (std::size_t i = 0; i < 64; ++i)
      for (std::size_t c = 0; c < 4; ++c) part(i, c) = x(64 * half + i, c);
    Tensor<double> want = solo.forward(part, Mode::Train, rng);
    for (std::size_t i = 0; i < want.size(); ++i) {
      const double got = y[static_cast<std::size_t>(half) * want.size() + i];
      CHECK(std::abs(got - want[i]) <= 1e-12);
    }
  }
}

TEST_CASE("ghost size equal to the batch reproduces full-batch normalization") {
  Tensor<double> x = random_tensor({32, 5}, 9);
  BatchNorm<double> full(5);
  BatchNorm<double> ghosted(5, 1e-5, 0.9, 32);
  Rng rng(0);
  Tensor<double> a = full.forward(x, Mode::Train, rng);
  Tensor<double> b = ghosted.forward(x, Mode::Train, rng);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("batchnorm rejects bad ghost configurations") {
  Rng rng(0);
  BatchNorm<double> bn(3, 1e-5, 0.9, 48);
  Tensor<double> x = random_tensor({64, 3}, 2);
  CHECK_THROWS_AS(bn.forward(x, Mode::Train, rng), std::invalid_argument);

  // one feature vector per group has nothing to estimate a variance from
  BatchNorm<double> degenerate(3);
  Tensor<double> single = random_tensor({1, 3}, 3);
  CHECK_THROWS_AS(degenerate.forward(single, Mode::Train, rng), std::invalid_argument);
}

TEST_CASE("single-image group runs as instance normalization") {
  // spatial axes keep the per-group reduction count above 1
  BatchNorm<double> bn(2);
  Tensor<double> x = random_tensor({1, 4, 4, 2}, 5, 3.0, 2.0);
  Rng rng(0);
  Tensor<double> y = bn.forward(x, Mode::Train, rng);
  auto moments = channel_moments(y);
  for (std::size_t c = 0; c < 2; ++c) CHECK(std::abs(moments.mean[c]) <= 1e-6);
}

TEST_CASE("batchnorm moving statistics follow the momentum rule") {
  BatchNorm<double> bn(2, 1e-5, 0.9);
  Tensor<double> x = random_tensor({16, 2}, 11, 1.0, 2.0);
  auto m = channel_moments(x);
  Rng rng(0);
  bn.forward(x, Mode::Train, rng);
  for (std::size_t c = 0; c < 2; ++c) {
    CHECK(bn.moving_mean()[c] == doctest::Approx(0.1 * m.mean[c]).epsilon(1e-12));
    CHECK(bn.moving_var()[c] == doctest::Approx(0.9 + 0.1 * m.var[c]).epsilon(1e-12));
    CHECK(bn.moving_var()[c] >= 0.0);
  }
}

TEST_CASE("batchnorm backward basics") {
  BatchNorm<double> bn(4);
  Tensor<double> x = random_tensor({8, 4}, 13);
  Rng rng(0);

  SUBCASE("backward before forward is rejected") {
    CHECK_THROWS_AS(bn.backward(x), std::runtime_error);
  }

  SUBCASE("zero upstream gradient gives zero gradients") {
    bn.forward(x, Mode::Train, rng);
    Tensor<double> zero({8, 4});
    Tensor<double> gin = bn.backward(zero);
    for (std::size_t i = 0; i < gin.size(); ++i) CHECK(gin[i] == 0.0);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(bn.gamma().grad[i] == 0.0);
      CHECK(bn.beta().grad[i] == 0.0);
    }
  }

  SUBCASE("doubling gamma doubles the input gradient") {
    bn.forward(x, Mode::Train, rng);
    Tensor<double> g = random_tensor({8, 4}, 14);
    Tensor<double> gin1 = bn.backward(g);
    for (std::size_t c = 0; c < 4; ++c) bn.gamma().value[c] *= 2.0;
    bn.forward(x, Mode::Train, rng);
    Tensor<double> gin2 = bn.backward(g);
    for (std::size_t i = 0; i < gin1.size(); ++i)
      CHECK(gin2[i] == doctest::Approx(2.0 * gin1[i]).epsilon(1e-12));
  }
}

TEST_CASE("eval forward is deterministic and consumes no randomness") {
  BatchNorm<double> bn(3);
  Dropout<double> drop(0.5);
  Tensor<double> x = random_tensor({6, 3}, 17);

  Rng rng(123);
  Tensor<double> y1 = bn.forward(x, Mode::Eval, rng);
  Tensor<double> d1 = drop.forward(x, Mode::Eval, rng);
  CHECK(rng.next_u64() == Rng(123).next_u64());

  Rng rng2(99);
  Tensor<double> y2 = bn.forward(x, Mode::Eval, rng2);
  for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1[i] == y2[i]);
  for (std::size_t i = 0; i < d1.size(); ++i) CHECK(d1[i] == x[i]);
}

TEST_CASE("dropout") {
  SUBCASE("p = 0 is the identity in both modes") {
    Dropout<double> drop(0.0);
    Tensor<double> x = random_tensor({5, 4}, 19);
    Rng rng(0);
    Tensor<double> train = drop.forward(x, Mode::Train, rng);
    Tensor<double> eval = drop.forward(x, Mode::Eval, rng);
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(train[i] == x[i]);
      CHECK(eval[i] == x[i]);
    }
  }

  SUBCASE("p outside [0, 1) is rejected") {
    CHECK_THROWS_AS(Dropout<double>(1.0), std::invalid_argument);
    CHECK_THROWS_AS(Dropout<double>(-0.1), std::invalid_argument);
  }

  SUBCASE("train-mode mean over many masks recovers the input") {
    const double p = 0.3;
    Dropout<double> drop(p);
    Tensor<double> x = random_tensor({8, 5}, 23);
    const int draws = 10000;
    Tensor<double> acc({8, 5});
    Rng rng(31);
    for (int d = 0; d < draws; ++d) acc += drop.forward(x, Mode::Train, rng);
    const double se_scale = std::sqrt(p / (1.0 - p) / static_cast<double>(draws));
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double mean = acc[i] / draws;
      const double se = std::abs(x[i]) * se_scale;
      CHECK(std::abs(mean - x[i]) <= 3.0 * se + 1e-12);
    }
  }

  SUBCASE("backward applies the cached mask") {
    Dropout<double> drop(0.5);
    Tensor<double> x({4, 4}, 1.0);
    Rng rng(3);
    Tensor<double> y = drop.forward(x, Mode::Train, rng);
    Tensor<double> g({4, 4}, 1.0);
    Tensor<double> gin = drop.backward(g);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(gin[i] == y[i]);
  }
}

TEST_CASE("scalar multiplier") {
  ScalarMultiplier<double> mult(0.0);
  Tensor<double> x = random_tensor({3, 4}, 29);
  Rng rng(0);
  Tensor<double> y = mult.forward(x, Mode::Train, rng);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == 0.0);

  Tensor<double> g = random_tensor({3, 4}, 30);
  Tensor<double> gin = mult.backward(g);
  double expected = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) expected += g[i] * x[i];
  CHECK(mult.alpha().grad[0] == doctest::Approx(expected).epsilon(1e-12));
  for (std::size_t i = 0; i < gin.size(); ++i) CHECK(gin[i] == 0.0);
}

TEST_CASE("scalar bias shifts every element") {
  ScalarBias<double> bias;
  bias.bias().value[0] = 0.75;
  Tensor<double> x = random_tensor({2, 3}, 31);
  Rng rng(0);
  Tensor<double> y = bias.forward(x, Mode::Train, rng);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == x[i] + 0.75);
  Tensor<double> g({2, 3}, 1.0);
  bias.backward(g);
  CHECK(bias.bias().grad[0] == doctest::Approx(6.0));
}

TEST_CASE("linear applies bias and validates shapes") {
  Linear<double> layer(3, 2, true);
  layer.weight().value.fill(0.0);
  layer.bias()->value[0] = 1.0;
  layer.bias()->value[1] = -2.0;
  Tensor<double> x = random_tensor({4, 3}, 37);
  Rng rng(0);
  Tensor<double> y = layer.forward(x, Mode::Train, rng);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(y(i, 0) == 1.0);
    CHECK(y(i, 1) == -2.0);
  }
  Tensor<double> bad({4, 5});
  CHECK_THROWS_AS(layer.forward(bad, Mode::Train, rng), std::invalid_argument);
}

TEST_CASE("global mean pool averages spatial positions") {
  GlobalMeanPool<double> pool;
  Tensor<double> x({1, 2, 2, 1});
  x(0, 0, 0, 0) = 1.0;
  x(0, 0, 1, 0) = 2.0;
  x(0, 1, 0, 0) = 3.0;
  x(0, 1, 1, 0) = 4.0;
  Rng rng(0);
  Tensor<double> y = pool.forward(x, Mode::Train, rng);
  CHECK(y(0, 0) == doctest::Approx(2.5));
}

TEST_CASE("l2 penalty") {
  SUBCASE("zero coefficient is a no-op") {
    ParamSlot<double> w{"w", Tensor<double>({2}, 3.0), Tensor<double>({2}), true};
    std::vector<ParamSlot<double>*> slots{&w};
    CHECK(l2_penalty(std::span<ParamSlot<double>* const>(slots), 0.0) == 0.0);
    CHECK(w.grad[0] == 0.0);
  }
  SUBCASE("hand arithmetic on a single weight") {
    ParamSlot<double> w{"w", Tensor<double>({1}, 2.0), Tensor<double>({1}), true};
    std::vector<ParamSlot<double>*> slots{&w};
    const double penalty = l2_penalty(std::span<ParamSlot<double>* const>(slots), 5e-4);
    CHECK(penalty == doctest::Approx(1e-3));
    CHECK(w.grad[0] == doctest::Approx(1e-3));
  }
  SUBCASE("non-decay slots are excluded unless include_all") {
    ParamSlot<double> gamma{"gamma", Tensor<double>({1}, 2.0), Tensor<double>({1}), false};
    std::vector<ParamSlot<double>*> slots{&gamma};
    CHECK(l2_penalty(std::span<ParamSlot<double>* const>(slots), 1.0) == 0.0);
    CHECK(gamma.grad[0] == 0.0);
    CHECK(l2_penalty(std::span<ParamSlot<double>* const>(slots), 1.0, true) ==
          doctest::Approx(2.0));
    CHECK(gamma.grad[0] == doctest::Approx(2.0));
  }
  SUBCASE("negative coefficient is rejected") {
    std::vector<ParamSlot<double>*> slots;
    CHECK_THROWS_AS(l2_penalty(std::span<ParamSlot<double>* const>(slots), -1.0),
                    std::invalid_argument);
  }
}
