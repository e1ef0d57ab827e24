#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "resprop/signalprop.hpp"

using namespace resprop;

namespace {

// least squares y = a*x + b over x = 1..n
std::pair<double, double> fit_line(const std::vector<double>& y) {
  const double n = static_cast<double>(y.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double x = static_cast<double>(i + 1);
    sx += x;
    sy += y[i];
    sxx += x * x;
    sxy += x * y[i];
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double intercept = (sy - slope * sx) / n;
  return {slope, intercept};
}

double r_squared(const std::vector<double>& y) {
  auto [slope, intercept] = fit_line(y);
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / y.size();
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double fit = slope * static_cast<double>(i + 1) + intercept;
    ss_res += (y[i] - fit) * (y[i] - fit);
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  return 1.0 - ss_res / ss_tot;
}

NetworkSpec fc_spec(Family family, VariantKind kind, std::size_t width, std::size_t depth) {
  NetworkSpec spec;
  spec.family = family;
  spec.width = width;
  spec.depth = depth;
  spec.in_features = 100;
  spec.variant.kind = kind;
  return spec;
}

}  // namespace

TEST_CASE("capture copies batch statistics into the moving slots") {
  Rng rng(1);
  Network<double> net = build_fc_linear<double>(16, 2, true, 10, rng);
  Rng data(2);
  Tensor<double> batch = gaussian<double>({32, 10}, 0.0, 1.0, data);

  CHECK(capture_bn_statistics(net, batch));
  BatchNorm<double>* stem_bn = net.batchnorms().front();
  auto m = channel_moments(batch);
  for (std::size_t c = 0; c < 10; ++c) {
    CHECK(stem_bn->moving_mean()[c] == m.mean[c]);
    CHECK(stem_bn->moving_var()[c] == m.var[c]);
  }
  // momentum is restored after the capture
  CHECK(stem_bn->momentum() == 0.9);

  SUBCASE("idempotent on the same batch") {
    std::vector<double> before;
    for (BatchNorm<double>* bn : net.batchnorms())
      for (std::size_t c = 0; c < bn->channels(); ++c) before.push_back(bn->moving_var()[c]);
    capture_bn_statistics(net, batch);
    std::size_t i = 0;
    for (BatchNorm<double>* bn : net.batchnorms())
      for (std::size_t c = 0; c < bn->channels(); ++c) CHECK(bn->moving_var()[c] == before[i++]);
  }

  SUBCASE("eval forward after capture matches train forward") {
    Rng fwd(0);
    Tensor<double> train_out = net.forward(batch, Mode::Train, fwd);
    Tensor<double> eval_out = net.forward(batch, Mode::Eval, fwd);
    for (std::size_t i = 0; i < train_out.size(); ++i)
      CHECK(std::abs(train_out[i] - eval_out[i]) <= 1e-6);
  }
}

TEST_CASE("capture on a norm-free network reports false") {
  Rng rng(3);
  Network<double> net = build_fc_linear<double>(8, 1, false, 4, rng);
  Rng data(4);
  Tensor<double> batch = gaussian<double>({8, 4}, 0.0, 1.0, data);
  CHECK_FALSE(capture_bn_statistics(net, batch));
}

TEST_CASE("skipinit zero network has constant skip variance and zero fractions") {
  NetworkSpec spec = fc_spec(Family::FcRelu, VariantKind::SkipInit, 64, 12);
  StatReport report = measure_init_stats<double>(spec, 64, 5);
  REQUIRE(report.blocks.size() == 12);
  for (const BlockStats& s : report.blocks) {
    CHECK(s.skip_var == report.blocks[0].skip_var);
    CHECK(s.branch_var == 0.0);
  }
  const auto fractions = branch_fraction(report);
  for (double f : fractions) CHECK(f == 0.0);
}

TEST_CASE("closed-form predictions") {
  SUBCASE("relu constants at block 10") {
    TheoryPrediction p = predict({VariantKind::BnBranch}, Family::FcRelu, 10);
    CHECK(p.blocks[9].bn_moving_var ==
          doctest::Approx(10.0 * (1.0 - 1.0 / std::numbers::pi)).epsilon(1e-12));
    CHECK(p.blocks[9].bn_moving_var == doctest::Approx(6.8169).epsilon(1e-4));
    CHECK(p.blocks[9].bn_moving_mean_sq == doctest::Approx(3.1831).epsilon(1e-4));
    CHECK(p.blocks[9].skip_var == 10.0);
    CHECK(p.blocks[9].branch_var == 1.0);
  }
  SUBCASE("unnormalized linear doubling starts at 1") {
    TheoryPrediction p = predict({VariantKind::NoNorm}, Family::FcLinear, 4);
    CHECK(p.blocks[0].skip_var == 1.0);
    CHECK(p.blocks[3].skip_var == 8.0);
  }
  SUBCASE("normalized linear branch variance is 1 at every block") {
    TheoryPrediction p = predict({VariantKind::BnBranch}, Family::FcLinear, 7);
    for (const BlockStats& s : p.blocks) {
      CHECK(s.branch_var == 1.0);
      CHECK(s.bn_moving_mean_sq == 0.0);
    }
  }
  SUBCASE("unanalyzed constructions are rejected") {
    CHECK_THROWS_AS(predict({VariantKind::DivideBySqrt2}, Family::FcLinear, 3),
                    std::invalid_argument);
    CHECK_THROWS_AS(predict({VariantKind::BnBranch}, Family::ConvRelu, 3), std::invalid_argument);
  }
}

TEST_CASE("unnormalized linear network doubles per block") {
  // fast profile: width 256, batch 256, tolerances widened 1.5x
  NetworkSpec spec = fc_spec(Family::FcLinear, VariantKind::NoNorm, 256, 14);
  std::vector<StatReport> reports;
  for (std::uint64_t seed = 0; seed < 5; ++seed)
    reports.push_back(measure_init_stats<double>(spec, 256, seed));
  StatReport mean = average_reports(reports);
  for (std::size_t b = 0; b + 1 < mean.blocks.size(); ++b) {
    const double ratio = mean.blocks[b + 1].skip_var / mean.blocks[b].skip_var;
    CHECK(ratio >= 1.8);
    CHECK(ratio <= 2.2);
  }
  const auto fractions = branch_fraction(mean);
  for (double f : fractions) CHECK(std::abs(f - 0.5) <= 0.075);
}

TEST_CASE("normalized linear network grows linearly with tiny moving means") {
  NetworkSpec spec = fc_spec(Family::FcLinear, VariantKind::BnBranch, 256, 14);
  StatReport report = measure_mean(spec, 256, 5, 100);
  std::vector<double> skip;
  for (const BlockStats& s : report.blocks) {
    skip.push_back(s.skip_var);
    CHECK(s.branch_var == doctest::Approx(1.0).epsilon(0.15));
    CHECK(s.bn_moving_mean_sq <= 0.05 * (static_cast<double>(skip.size())));
  }
  auto [slope, intercept] = fit_line(skip);
  CHECK(slope >= 0.9);
  CHECK(slope <= 1.1);

  // branch fraction at block 9 is about 1/10
  const auto fractions = branch_fraction(report);
  CHECK(std::abs(fractions[8] - 0.1) <= 0.0225);
}

TEST_CASE("normalized relu network matches the arcsine-law constants") {
  NetworkSpec spec = fc_spec(Family::FcRelu, VariantKind::BnBranch, 256, 15);
  StatReport report = measure_mean(spec, 256, 5, 7);
  const double inv_pi = 1.0 / std::numbers::pi;
  for (std::size_t b = 4; b < report.blocks.size(); ++b) {
    const double l = static_cast<double>(b + 1);
    CHECK(report.blocks[b].bn_moving_var == doctest::Approx(l * (1.0 - inv_pi)).epsilon(0.15));
    CHECK(report.blocks[b].bn_moving_mean_sq == doctest::Approx(l * inv_pi).epsilon(0.225));
  }
}

TEST_CASE("conv network grows linearly in depth") {
  NetworkSpec spec;
  spec.family = Family::ConvRelu;
  spec.width = 32;
  spec.depth = 10;
  spec.in_features = 3;
  spec.variant.kind = VariantKind::BnBranch;
  StatReport report = measure_mean(spec, 64, 2, 11, 32);
  std::vector<double> skip;
  for (const BlockStats& s : report.blocks) skip.push_back(s.skip_var);
  CHECK(r_squared(skip) >= 0.95);
  auto [slope, intercept] = fit_line(skip);
  CHECK(slope > 0.4);
  CHECK(slope <= 1.1);
}

TEST_CASE("branch gradients scale exactly linearly in the multiplier") {
  NetworkSpec spec = fc_spec(Family::FcLinear, VariantKind::SkipInit, 32, 1);
  Rng data(13);
  Tensor<double> x = gaussian<double>({16, 100}, 0.0, 1.0, data);
  Tensor<double> loss_weights = gaussian<double>({16, 32}, 0.0, 1.0, data);

  auto branch_grad_norm = [&](double alpha) {
    Rng rng(17);  // same weights per alpha
    Network<double> net = build_network<double>(spec, rng);
    apply_skipinit(net, alpha);
    net.zero_grad();
    Rng fwd(0);
    net.forward(x, Mode::Train, fwd);
    net.backward(loss_weights);
    Layer<double>* weighted = net.branch_weighted_layers(0)[0];
    const Tensor<double>& g = static_cast<Linear<double>*>(weighted)->weight().grad;
    const double alpha_grad = net.multipliers()[0]->alpha().grad[0];
    return std::pair<double, double>(std::sqrt(squared_norm_of(g)), alpha_grad);
  };

  const auto [norm_1, ag_1] = branch_grad_norm(1.0);
  const auto [norm_05, ag_05] = branch_grad_norm(0.5);
  const auto [norm_025, ag_025] = branch_grad_norm(0.25);
  CHECK(std::abs(norm_05 / norm_1 - 0.5) <= 1e-10);
  CHECK(std::abs(norm_025 / norm_1 - 0.25) <= 1e-10);

  const auto [norm_0, ag_0] = branch_grad_norm(0.0);
  CHECK(norm_0 == 0.0);
  CHECK(ag_0 != 0.0);
  // the multiplier's own gradient is alpha-independent for a linear loss
  CHECK(ag_0 == doctest::Approx(ag_1).epsilon(1e-12));
}

TEST_CASE("float statistics runs flag divergence instead of crashing") {
  NetworkSpec spec = fc_spec(Family::FcLinear, VariantKind::NoNorm, 16, 300);
  StatReport report = measure_init_stats<float>(spec, 32, 3);
  CHECK(report.diverged);
  CHECK(report.blocks.size() < 300);
}

TEST_CASE("report averaging is order independent") {
  NetworkSpec spec = fc_spec(Family::FcLinear, VariantKind::BnBranch, 32, 4);
  std::vector<StatReport> reports;
  for (std::uint64_t seed = 0; seed < 3; ++seed)
    reports.push_back(measure_init_stats<double>(spec, 64, seed));
  StatReport fwd = average_reports(reports);
  std::reverse(reports.begin(), reports.end());
  StatReport rev = average_reports(reports);
  for (std::size_t b = 0; b < fwd.blocks.size(); ++b)
    CHECK(fwd.blocks[b].skip_var == doctest::Approx(rev.blocks[b].skip_var).epsilon(1e-12));
}

TEST_CASE("stat report csv carries measured and predicted columns") {
  NetworkSpec spec = fc_spec(Family::FcLinear, VariantKind::BnBranch, 32, 3);
  StatReport report = measure_init_stats<double>(spec, 64, 1);
  TheoryPrediction pred = predict(spec.variant, spec.family, spec.depth);
  const std::string csv = stat_report_csv(report, &pred);
  CHECK(csv.rfind("block,skip_var,branch_var,bn_moving_var,bn_moving_mean_sq,predicted_", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);  // header + 3 blocks
}
