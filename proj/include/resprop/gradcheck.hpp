#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "resprop/layers.hpp"
#include "resprop/tensor.hpp"

namespace resprop {

/// A differentiable computation under test: loss() re-evaluates the scalar
/// loss from current values; analytic() zeroes gradients and runs one
/// forward/backward; slots pair each value tensor with its analytic gradient.
struct GradHarness {
  std::function<double()> loss;
  std::function<void()> analytic;
  std::vector<std::pair<Tensor<double>*, Tensor<double>*>> slots;
};

/// Worst relative disagreement between analytic gradients and central finite
/// differences of loss(), over every coordinate of every slot. Errors are
/// normalized by max(1, |analytic|, |numeric|).
double max_grad_error(GradHarness& harness, double step = 1e-5);

/// Harness for a single layer: loss is a fixed random weighting of the
/// layer's output on a Gaussian input. kink_margin pushes input coordinates
/// away from 0 so piecewise-linear layers stay differentiable at the probe.
GradHarness layer_harness(std::shared_ptr<Layer<double>> layer, Shape input_shape,
                          std::uint64_t seed, Mode mode = Mode::Train, double kink_margin = 0.0);

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  bool skipped = false;
  std::string note;
};

/// Finite-difference checks (64-bit) for every layer backward plus three
/// small end-to-end networks. Degenerate configurations are reported as
/// skipped.
std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed, double tolerance = 1e-5);

}  // namespace resprop
