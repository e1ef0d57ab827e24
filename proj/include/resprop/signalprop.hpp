#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "resprop/csv.hpp"
#include "resprop/models.hpp"

namespace resprop {

/// Per-block initialization statistics. Variances pool every element (all
/// examples, channels and spatial positions); normalization statistics are
/// averaged over channels.
struct BlockStats {
  double skip_var = std::numeric_limits<double>::quiet_NaN();
  double branch_var = std::numeric_limits<double>::quiet_NaN();
  double bn_moving_var = std::numeric_limits<double>::quiet_NaN();
  double bn_moving_mean_sq = std::numeric_limits<double>::quiet_NaN();
  bool has_bn = false;
};

struct StatReport {
  std::vector<BlockStats> blocks;
  std::uint64_t seed = 0;
  std::size_t width = 0;
  std::size_t batch = 0;
  std::string family;
  std::string variant;
  bool diverged = false;
};

struct TheoryPrediction {
  std::vector<BlockStats> blocks;
};

/// Standardizes each trailing-axis feature column to mean 0, variance 1
/// (biased) across the leading batch axis.
template <typename T>
void standardize_features(Tensor<T>& x) {
  const std::size_t n = x.extent(0);
  const std::size_t f = x.size() / n;
  for (std::size_t j = 0; j < f; ++j) {
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = static_cast<double>(x[i * f + j]);
      sum += v;
      sumsq += v * v;
    }
    const double mean = sum / static_cast<double>(n);
    double var = sumsq / static_cast<double>(n) - mean * mean;
    if (var < 1e-16) var = 1e-16;
    const double inv_std = 1.0 / std::sqrt(var);
    for (std::size_t i = 0; i < n; ++i)
      x[i * f + j] = static_cast<T>((static_cast<double>(x[i * f + j]) - mean) * inv_std);
  }
}

/// One train-mode forward with all normalization momenta forced to 0, so each
/// moving statistic becomes exactly that batch's statistic. Returns false
/// (and does nothing else) when the network has no normalization layers.
template <typename T>
bool capture_bn_statistics(Network<T>& network, const Tensor<T>& batch) {
  auto bns = network.batchnorms();
  if (bns.empty()) return false;
  std::vector<double> saved;
  saved.reserve(bns.size());
  for (BatchNorm<T>* bn : bns) {
    saved.push_back(bn->momentum());
    bn->set_momentum(0.0);
  }
  Rng unused(0);
  network.forward(batch, Mode::Train, unused);
  for (std::size_t i = 0; i < bns.size(); ++i) bns[i]->set_momentum(saved[i]);
  return true;
}

/// One probed train-mode forward on a freshly initialized network: records
/// the pooled variance on the skip path and at each residual-branch end, and
/// captures the per-block normalization statistics (momentum-0 update).
/// Non-finite activations truncate the report and set the diverged flag.
template <typename T>
StatReport measure(Network<T>& network, const Tensor<T>& batch) {
  const NetworkSpec& spec = network.spec();
  StatReport report;
  report.width = spec.width;
  report.batch = batch.extent(0);
  report.family = family_name(spec.family);
  report.variant = variant_name(spec.variant);
  report.blocks.resize(spec.depth);

  auto bns = network.batchnorms();
  std::vector<double> saved;
  saved.reserve(bns.size());
  for (BatchNorm<T>* bn : bns) {
    saved.push_back(bn->momentum());
    bn->set_momentum(0.0);
  }

  BlockObserver<T> observer = [&](std::size_t b, const Tensor<T>& skip,
                                  const Tensor<T>& branch_end) {
    report.blocks[b].skip_var = variance_of(skip);
    report.blocks[b].branch_var = variance_of(branch_end);
  };
  Rng unused(0);
  network.forward(batch, Mode::Train, unused, &observer);
  for (std::size_t i = 0; i < bns.size(); ++i) bns[i]->set_momentum(saved[i]);

  for (std::size_t b = 0; b < spec.depth; ++b) {
    if (BatchNorm<T>* bn = network.branch_batchnorm(b)) {
      double var_sum = 0.0, mean_sq_sum = 0.0;
      const std::size_t c = bn->channels();
      for (std::size_t ch = 0; ch < c; ++ch) {
        var_sum += static_cast<double>(bn->moving_var()[ch]);
        const double m = static_cast<double>(bn->moving_mean()[ch]);
        mean_sq_sum += m * m;
      }
      report.blocks[b].bn_moving_var = var_sum / static_cast<double>(c);
      report.blocks[b].bn_moving_mean_sq = mean_sq_sum / static_cast<double>(c);
      report.blocks[b].has_bn = true;
    }
  }

  for (std::size_t b = 0; b < report.blocks.size(); ++b) {
    const BlockStats& s = report.blocks[b];
    if (!std::isfinite(s.skip_var) || !std::isfinite(s.branch_var)) {
      report.diverged = true;
      report.blocks.resize(b);
      break;
    }
  }
  return report;
}

/// Seeded end-to-end measurement: builds the network, draws a standardized
/// Gaussian probe batch and runs measure(). Conv networks probe image_hw^2
/// spatial inputs.
template <typename T>
StatReport measure_init_stats(const NetworkSpec& spec, std::size_t batch, std::uint64_t seed,
                              std::size_t image_hw = 32) {
  Rng weight_rng(seed);
  Network<T> net = build_network<T>(spec, weight_rng);
  Rng input_rng(seed ^ 0xda3e39cb94b95bdbull);
  Tensor<T> x = spec.family == Family::ConvRelu
                    ? gaussian<T>({batch, image_hw, image_hw, spec.in_features}, 0.0, 1.0, input_rng)
                    : gaussian<T>({batch, spec.in_features}, 0.0, 1.0, input_rng);
  standardize_features(x);
  StatReport report = measure(net, x);
  report.seed = seed;
  return report;
}

/// Mean of several reports (same geometry); the result is diverged if any
/// input is. Aggregation is order-independent.
StatReport average_reports(const std::vector<StatReport>& reports);

/// measure_init_stats in 64-bit, averaged over num_seeds seeds derived as
/// base_seed + index.
StatReport measure_mean(const NetworkSpec& spec, std::size_t batch, std::size_t num_seeds,
                        std::uint64_t base_seed, std::size_t image_hw = 32);

/// Closed-form initialization predictions for the analyzed constructions.
TheoryPrediction predict(const BlockVariant& variant, Family family, std::size_t depth);

/// Per block: branch_var / (branch_var + skip_var); 0 when both are 0.
std::vector<double> branch_fraction(const StatReport& report);

/// CSV with measured columns and, when a prediction is given, the predicted
/// counterparts.
std::string stat_report_csv(const StatReport& report, const TheoryPrediction* prediction);

}  // namespace resprop
