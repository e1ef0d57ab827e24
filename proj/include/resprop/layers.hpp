#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "resprop/ops.hpp"
#include "resprop/rng.hpp"
#include "resprop/tensor.hpp"

namespace resprop {

enum class Mode { Train, Eval };

enum class LayerKind {
  Linear,
  Conv2D,
  ReLU,
  BatchNorm,
  ScalarMultiplier,
  ScalarBias,
  Dropout,
  GlobalMeanPool,
};

template <typename T>
struct ParamSlot {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool weight_decay = false;  // participates in the L2 penalty
};

/// One differentiable layer. forward caches whatever backward needs; backward
/// accumulates into the parameter grads and returns the input gradient.
/// Eval-mode forwards never consume the Rng.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual LayerKind kind() const = 0;
  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode, Rng& rng) = 0;
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
  virtual std::vector<ParamSlot<T>*> params() { return {}; }

 protected:
  void require_cache(bool have, const char* who) const {
    if (!have) throw std::runtime_error(std::string(who) + ": backward without matching forward");
  }
};

template <typename T>
class Linear final : public Layer<T> {
 public:
  Linear(std::size_t in_features, std::size_t out_features, bool use_bias)
      : weight_{"weight", Tensor<T>({in_features, out_features}),
                Tensor<T>({in_features, out_features}), true} {
    if (use_bias)
      bias_ = ParamSlot<T>{"bias", Tensor<T>({out_features}), Tensor<T>({out_features}), false};
  }

  LayerKind kind() const override { return LayerKind::Linear; }
  std::size_t fan_in() const { return weight_.value.extent(0); }
  ParamSlot<T>& weight() { return weight_; }
  ParamSlot<T>* bias() { return bias_ ? &*bias_ : nullptr; }

  Tensor<T> forward(const Tensor<T>& x, Mode, Rng&) override {
    if (x.rank() != 2 || x.extent(1) != weight_.value.extent(0))
      throw std::invalid_argument("Linear: input " + shape_str(x.shape()) +
                                  " incompatible with weight " + shape_str(weight_.value.shape()));
    input_ = x;
    Tensor<T> y = matmul(x, weight_.value);
    if (bias_) {
      const std::size_t n = y.extent(0), m = y.extent(1);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) y(i, j) += bias_->value[j];
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    this->require_cache(!input_.empty(), "Linear");
    const std::size_t n = input_.extent(0);
    const std::size_t in = weight_.value.extent(0), out = weight_.value.extent(1);
    if (grad_out.shape() != Shape{n, out})
      throw std::invalid_argument("Linear: grad shape mismatch");
    detail::gemm(true, false, in, out, n, T(1), input_.data(), in, grad_out.data(), out, T(1),
                 weight_.grad.data(), out);
    if (bias_) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < out; ++j) bias_->grad[j] += grad_out(i, j);
    }
    Tensor<T> grad_in({n, in});
    detail::gemm(false, true, n, in, out, T(1), grad_out.data(), out, weight_.value.data(), out,
                 T(0), grad_in.data(), in);
    return grad_in;
  }

  std::vector<ParamSlot<T>*> params() override {
    std::vector<ParamSlot<T>*> p{&weight_};
    if (bias_) p.push_back(&*bias_);
    return p;
  }

 private:
  ParamSlot<T> weight_;
  std::optional<ParamSlot<T>> bias_;
  Tensor<T> input_;
};

template <typename T>
class Conv2D final : public Layer<T> {
 public:
  Conv2D(std::size_t kh, std::size_t kw, std::size_t cin, std::size_t cout, std::size_t stride,
         Padding padding, bool use_bias)
      : kernel_{"kernel", Tensor<T>({kh, kw, cin, cout}), Tensor<T>({kh, kw, cin, cout}), true},
        stride_(stride),
        padding_(padding) {
    if (use_bias) bias_ = ParamSlot<T>{"bias", Tensor<T>({cout}), Tensor<T>({cout}), false};
  }

  LayerKind kind() const override { return LayerKind::Conv2D; }
  std::size_t fan_in() const {
    const Shape& s = kernel_.value.shape();
    return s[0] * s[1] * s[2];
  }
  ParamSlot<T>& kernel() { return kernel_; }
  ParamSlot<T>* bias() { return bias_ ? &*bias_ : nullptr; }

  Tensor<T> forward(const Tensor<T>& x, Mode, Rng&) override {
    input_ = x;
    Tensor<T> y = conv2d(x, kernel_.value, stride_, padding_);
    if (bias_) {
      const std::size_t c = y.extent(3), pixels = y.size() / c;
      T* p = y.data();
      for (std::size_t i = 0; i < pixels; ++i, p += c)
        for (std::size_t j = 0; j < c; ++j) p[j] += bias_->value[j];
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    this->require_cache(!input_.empty(), "Conv2D");
    auto [grad_in, grad_kernel] =
        conv2d_backward(input_, kernel_.value, grad_out, stride_, padding_);
    kernel_.grad += grad_kernel;
    if (bias_) {
      const std::size_t c = grad_out.extent(3), pixels = grad_out.size() / c;
      const T* p = grad_out.data();
      for (std::size_t i = 0; i < pixels; ++i, p += c)
        for (std::size_t j = 0; j < c; ++j) bias_->grad[j] += p[j];
    }
    return grad_in;
  }

  std::vector<ParamSlot<T>*> params() override {
    std::vector<ParamSlot<T>*> p{&kernel_};
    if (bias_) p.push_back(&*bias_);
    return p;
  }

 private:
  ParamSlot<T> kernel_;
  std::optional<ParamSlot<T>> bias_;
  std::size_t stride_;
  Padding padding_;
  Tensor<T> input_;
};

template <typename T>
class ReLU final : public Layer<T> {
 public:
  LayerKind kind() const override { return LayerKind::ReLU; }

  Tensor<T> forward(const Tensor<T>& x, Mode, Rng&) override {
    input_ = x;
    return relu(x);
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    this->require_cache(!input_.empty(), "ReLU");
    if (!grad_out.same_shape(input_)) throw std::invalid_argument("ReLU: grad shape mismatch");
    Tensor<T> grad_in(grad_out.shape());
    for (std::size_t i = 0; i < grad_in.size(); ++i)
      grad_in[i] = input_[i] > T(0) ? grad_out[i] : T(0);
    return grad_in;
  }

 private:
  Tensor<T> input_;
};

/// Per-channel batch normalization over the last axis. In train mode the
/// batch axis is split into contiguous ghost groups of ghost_size examples
/// (0 = full batch), each normalized with its own statistics; moving
/// statistics are updated with the group average. Eval mode uses the moving
/// statistics. Requires at least 2 reduced elements per group, so a
/// single-image group is legal for spatial inputs (instance normalization)
/// but degenerate for feature vectors.
template <typename T>
class BatchNorm final : public Layer<T> {
 public:
  explicit BatchNorm(std::size_t channels, double epsilon = 1e-5, double momentum = 0.9,
                     std::size_t ghost_size = 0)
      : gamma_{"gamma", Tensor<T>({channels}, T(1)), Tensor<T>({channels}), false},
        beta_{"beta", Tensor<T>({channels}), Tensor<T>({channels}), false},
        moving_mean_({channels}, T(0)),
        moving_var_({channels}, T(1)),
        epsilon_(epsilon),
        momentum_(momentum),
        ghost_size_(ghost_size) {
    if (epsilon <= 0.0) throw std::invalid_argument("BatchNorm: epsilon must be positive");
    if (momentum < 0.0 || momentum > 1.0)
      throw std::invalid_argument("BatchNorm: momentum must be in [0, 1]");
  }

  LayerKind kind() const override { return LayerKind::BatchNorm; }
  std::size_t channels() const { return gamma_.value.size(); }
  ParamSlot<T>& gamma() { return gamma_; }
  ParamSlot<T>& beta() { return beta_; }
  Tensor<T>& moving_mean() { return moving_mean_; }
  Tensor<T>& moving_var() { return moving_var_; }
  double momentum() const { return momentum_; }
  void set_momentum(double m) { momentum_ = m; }
  std::size_t ghost_size() const { return ghost_size_; }
  void set_ghost_size(std::size_t g) { ghost_size_ = g; }
  double epsilon() const { return epsilon_; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode, Rng&) override {
    const std::size_t c = check_input(x);
    if (mode == Mode::Eval) return eval_forward(x, c);
    return train_forward(x, c);
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    this->require_cache(!xhat_.empty(), "BatchNorm");
    if (!grad_out.same_shape(xhat_)) throw std::invalid_argument("BatchNorm: grad shape mismatch");
    const std::size_t c = channels();
    Tensor<T> grad_in(grad_out.shape());

    // gamma/beta grads pool over every group.
    for (std::size_t i = 0; i < grad_out.size(); ++i) {
      const std::size_t ch = i % c;
      gamma_.grad[ch] += grad_out[i] * xhat_[i];
      beta_.grad[ch] += grad_out[i];
    }

    if (eval_cache_) {
      // Moving statistics are constants: the Jacobian is a per-channel scale.
      for (std::size_t i = 0; i < grad_out.size(); ++i) {
        const std::size_t ch = i % c;
        grad_in[i] = static_cast<T>(static_cast<double>(grad_out[i]) *
                                    static_cast<double>(gamma_.value[ch]) * inv_std_[ch]);
      }
      return grad_in;
    }

    const std::size_t group_elems = xhat_.size() / groups_;
    const double z = static_cast<double>(group_elems / c);
    std::vector<double> sum_g(c), sum_gx(c);
    for (std::size_t g = 0; g < groups_; ++g) {
      std::fill(sum_g.begin(), sum_g.end(), 0.0);
      std::fill(sum_gx.begin(), sum_gx.end(), 0.0);
      const std::size_t base = g * group_elems;
      for (std::size_t i = 0; i < group_elems; ++i) {
        const std::size_t ch = i % c;
        const double gy = static_cast<double>(grad_out[base + i]) *
                          static_cast<double>(gamma_.value[ch]);
        sum_g[ch] += gy;
        sum_gx[ch] += gy * static_cast<double>(xhat_[base + i]);
      }
      for (std::size_t i = 0; i < group_elems; ++i) {
        const std::size_t ch = i % c;
        const double gy = static_cast<double>(grad_out[base + i]) *
                          static_cast<double>(gamma_.value[ch]);
        const double val = inv_std_[g * c + ch] *
                           (gy - (sum_g[ch] + static_cast<double>(xhat_[base + i]) * sum_gx[ch]) / z);
        grad_in[base + i] = static_cast<T>(val);
      }
    }
    return grad_in;
  }

  std::vector<ParamSlot<T>*> params() override { return {&gamma_, &beta_}; }

 private:
  std::size_t check_input(const Tensor<T>& x) const {
    if (x.rank() < 2)
      throw std::invalid_argument("BatchNorm: input must have a batch and a channel axis");
    if (x.extent(x.rank() - 1) != channels())
      throw std::invalid_argument("BatchNorm: channel extent " +
                                  std::to_string(x.extent(x.rank() - 1)) + " != " +
                                  std::to_string(channels()));
    return channels();
  }

  Tensor<T> eval_forward(const Tensor<T>& x, std::size_t c) {
    xhat_ = Tensor<T>(x.shape());
    inv_std_.assign(c, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch)
      inv_std_[ch] = 1.0 / std::sqrt(static_cast<double>(moving_var_[ch]) + epsilon_);
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const std::size_t ch = i % c;
      const double norm =
          (static_cast<double>(x[i]) - static_cast<double>(moving_mean_[ch])) * inv_std_[ch];
      xhat_[i] = static_cast<T>(norm);
      y[i] = static_cast<T>(static_cast<double>(gamma_.value[ch]) * norm +
                            static_cast<double>(beta_.value[ch]));
    }
    eval_cache_ = true;
    groups_ = 1;
    return y;
  }

  Tensor<T> train_forward(const Tensor<T>& x, std::size_t c) {
    const std::size_t batch = x.extent(0);
    const std::size_t g = ghost_size_ == 0 ? batch : ghost_size_;
    if (batch % g != 0)
      throw std::invalid_argument("BatchNorm: batch " + std::to_string(batch) +
                                  " not divisible by ghost size " + std::to_string(g));
    groups_ = batch / g;
    const std::size_t group_elems = x.size() / groups_;
    const std::size_t z = group_elems / c;
    if (z < 2)
      throw std::invalid_argument("BatchNorm: degenerate variance, ghost group reduces over " +
                                  std::to_string(z) + " element(s)");

    xhat_ = Tensor<T>(x.shape());
    inv_std_.assign(groups_ * c, 0.0);
    Tensor<T> y(x.shape());
    std::vector<double> sum(c), sumsq(c), mean_avg(c, 0.0), var_avg(c, 0.0);
    for (std::size_t grp = 0; grp < groups_; ++grp) {
      std::fill(sum.begin(), sum.end(), 0.0);
      std::fill(sumsq.begin(), sumsq.end(), 0.0);
      const std::size_t base = grp * group_elems;
      for (std::size_t i = 0; i < group_elems; ++i) {
        const double v = static_cast<double>(x[base + i]);
        sum[i % c] += v;
        sumsq[i % c] += v * v;
      }
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double mean = sum[ch] / static_cast<double>(z);
        double var = sumsq[ch] / static_cast<double>(z) - mean * mean;
        if (var < 0.0) var = 0.0;
        inv_std_[grp * c + ch] = 1.0 / std::sqrt(var + epsilon_);
        mean_avg[ch] += mean / static_cast<double>(groups_);
        var_avg[ch] += var / static_cast<double>(groups_);
        sum[ch] = mean;  // reuse as per-channel mean for the normalize pass
      }
      for (std::size_t i = 0; i < group_elems; ++i) {
        const std::size_t ch = i % c;
        const double norm =
            (static_cast<double>(x[base + i]) - sum[ch]) * inv_std_[grp * c + ch];
        xhat_[base + i] = static_cast<T>(norm);
        y[base + i] = static_cast<T>(static_cast<double>(gamma_.value[ch]) * norm +
                                     static_cast<double>(beta_.value[ch]));
      }
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      moving_mean_[ch] = static_cast<T>(momentum_ * static_cast<double>(moving_mean_[ch]) +
                                        (1.0 - momentum_) * mean_avg[ch]);
      moving_var_[ch] = static_cast<T>(momentum_ * static_cast<double>(moving_var_[ch]) +
                                       (1.0 - momentum_) * var_avg[ch]);
    }
    eval_cache_ = false;
    return y;
  }

  ParamSlot<T> gamma_, beta_;
  Tensor<T> moving_mean_, moving_var_;
  double epsilon_;
  double momentum_;
  std::size_t ghost_size_;

  // backward cache
  Tensor<T> xhat_;
  std::vector<double> inv_std_;  // per (group, channel) in train, per channel in eval
  std::size_t groups_ = 1;
  bool eval_cache_ = false;
};

/// y = alpha * x with a single learnable scalar.
template <typename T>
class ScalarMultiplier final : public Layer<T> {
 public:
  explicit ScalarMultiplier(double alpha)
      : alpha_{"alpha", Tensor<T>({1}, static_cast<T>(alpha)), Tensor<T>({1}), false} {}

  LayerKind kind() const override { return LayerKind::ScalarMultiplier; }
  T value() const { return alpha_.value[0]; }
  void set_value(T v) { alpha_.value[0] = v; }
  ParamSlot<T>& alpha() { return alpha_; }

  Tensor<T> forward(const Tensor<T>& x, Mode, Rng&) override {
    input_ = x;
    Tensor<T> y = x;
    y.scale(alpha_.value[0]);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    this->require_cache(!input_.empty(), "ScalarMultiplier");
    double acc = 0.0;
    for (std::size_t i = 0; i < grad_out.size(); ++i)
      acc += static_cast<double>(grad_out[i]) * static_cast<double>(input_[i]);
    alpha_.grad[0] += static_cast<T>(acc);
    Tensor<T> grad_in = grad_out;
    grad_in.scale(alpha_.value[0]);
    return grad_in;
  }

  std::vector<ParamSlot<T>*> params() override { return {&alpha_}; }

 private:
  ParamSlot<T> alpha_;
  Tensor<T> input_;
};

/// y = x + b with a single learnable scalar.
template <typename T>
class ScalarBias final : public Layer<T> {
 public:
  ScalarBias() : bias_{"bias", Tensor<T>({1}), Tensor<T>({1}), false} {}

  LayerKind kind() const override { return LayerKind::ScalarBias; }
  ParamSlot<T>& bias() { return bias_; }

  Tensor<T> forward(const Tensor<T>& x, Mode, Rng&) override {
    seen_forward_ = true;
    Tensor<T> y = x;
    const T b = bias_.value[0];
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += b;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    this->require_cache(seen_forward_, "ScalarBias");
    double acc = 0.0;
    for (std::size_t i = 0; i < grad_out.size(); ++i) acc += static_cast<double>(grad_out[i]);
    bias_.grad[0] += static_cast<T>(acc);
    return grad_out;
  }

  std::vector<ParamSlot<T>*> params() override { return {&bias_}; }

 private:
  ParamSlot<T> bias_;
  bool seen_forward_ = false;
};

/// Inverted dropout: surviving activations are scaled by 1/(1-p) in train
/// mode so the eval forward is the identity and consumes no randomness.
template <typename T>
class Dropout final : public Layer<T> {
 public:
  explicit Dropout(double p) : p_(p) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("Dropout: p must be in [0, 1)");
  }

  LayerKind kind() const override { return LayerKind::Dropout; }
  double p() const { return p_; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode, Rng& rng) override {
    if (mode == Mode::Eval) {
      train_cache_ = false;
      seen_forward_ = true;
      return x;
    }
    const T keep_scale = static_cast<T>(1.0 / (1.0 - p_));
    mask_ = Tensor<T>(x.shape());
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const T m = rng.uniform() >= p_ ? keep_scale : T(0);
      mask_[i] = m;
      y[i] = x[i] * m;
    }
    train_cache_ = true;
    seen_forward_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    this->require_cache(seen_forward_, "Dropout");
    if (!train_cache_) return grad_out;
    Tensor<T> grad_in(grad_out.shape());
    for (std::size_t i = 0; i < grad_in.size(); ++i) grad_in[i] = grad_out[i] * mask_[i];
    return grad_in;
  }

 private:
  double p_;
  Tensor<T> mask_;
  bool train_cache_ = false;
  bool seen_forward_ = false;
};

/// N x H x W x C -> N x C mean over the spatial axes.
template <typename T>
class GlobalMeanPool final : public Layer<T> {
 public:
  LayerKind kind() const override { return LayerKind::GlobalMeanPool; }

  Tensor<T> forward(const Tensor<T>& x, Mode, Rng&) override {
    if (x.rank() != 4)
      throw std::invalid_argument("GlobalMeanPool: input must be N x H x W x C");
    in_shape_ = x.shape();
    const std::size_t n = x.extent(0), h = x.extent(1), w = x.extent(2), c = x.extent(3);
    Tensor<T> y({n, c});
    const double inv = 1.0 / static_cast<double>(h * w);
    for (std::size_t b = 0; b < n; ++b) {
      std::vector<double> acc(c, 0.0);
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
          for (std::size_t ch = 0; ch < c; ++ch) acc[ch] += static_cast<double>(x(b, i, j, ch));
      for (std::size_t ch = 0; ch < c; ++ch) y(b, ch) = static_cast<T>(acc[ch] * inv);
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    this->require_cache(!in_shape_.empty(), "GlobalMeanPool");
    const std::size_t n = in_shape_[0], h = in_shape_[1], w = in_shape_[2], c = in_shape_[3];
    if (grad_out.shape() != Shape{n, c})
      throw std::invalid_argument("GlobalMeanPool: grad shape mismatch");
    Tensor<T> grad_in(in_shape_);
    const T inv = static_cast<T>(1.0 / static_cast<double>(h * w));
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
          for (std::size_t ch = 0; ch < c; ++ch) grad_in(b, i, j, ch) = grad_out(b, ch) * inv;
    return grad_in;
  }

 private:
  Shape in_shape_;
};

/// Adds (coefficient/2) * sum(w^2) to the loss and coefficient * w to each
/// gradient, for the slots flagged for weight decay (or all of them).
template <typename T>
double l2_penalty(std::span<ParamSlot<T>* const> params, double coefficient,
                  bool include_all = false) {
  if (coefficient < 0.0) throw std::invalid_argument("l2_penalty: negative coefficient");
  if (coefficient == 0.0) return 0.0;
  double penalty = 0.0;
  for (ParamSlot<T>* slot : params) {
    if (!include_all && !slot->weight_decay) continue;
    for (std::size_t i = 0; i < slot->value.size(); ++i) {
      const double w = static_cast<double>(slot->value[i]);
      penalty += 0.5 * coefficient * w * w;
      slot->grad[i] += static_cast<T>(coefficient * w);
    }
  }
  return penalty;
}

}  // namespace resprop
