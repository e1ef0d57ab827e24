#pragma once

#include <cmath>
#include <stdexcept>

#include "resprop/ops.hpp"
#include "resprop/rng.hpp"
#include "resprop/tensor.hpp"

namespace resprop {

enum class InitKind { He, LeCun, SkipInit, Fixup, Zero };

struct InitScheme {
  InitKind kind = InitKind::He;
  double alpha = 0.0;  // SkipInit multiplier value
  int convs_per_branch = 2;  // Fixup's m
};

/// i.i.d. N(0, 2/fan_in).
template <typename T>
void he_init(Tensor<T>& weight, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) throw std::invalid_argument("he_init: fan_in must be positive");
  fill_gaussian(weight, 0.0, std::sqrt(2.0 / static_cast<double>(fan_in)), rng);
}

/// i.i.d. N(0, 1/fan_in), variance-preserving for linear layers.
template <typename T>
void lecun_init(Tensor<T>& weight, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) throw std::invalid_argument("lecun_init: fan_in must be positive");
  fill_gaussian(weight, 0.0, std::sqrt(1.0 / static_cast<double>(fan_in)), rng);
}

template <typename T>
void zero_init(Tensor<T>& weight) {
  weight.fill(T(0));
}

}  // namespace resprop
