#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "resprop/rng.hpp"
#include "resprop/tensor.hpp"

namespace resprop {

namespace detail {

// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C. Backed by a
// single-threaded BLAS so repeated calls are bit-reproducible.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, float alpha,
          const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta, float* c,
          std::size_t ldc);
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta,
          double* c, std::size_t ldc);

}  // namespace detail

/// Tensor of i.i.d. Gaussian samples with the given moments.
template <typename T>
Tensor<T> gaussian(Shape shape, double mean, double std, Rng& rng) {
  if (!std::isfinite(mean) || !std::isfinite(std))
    throw std::invalid_argument("gaussian: non-finite mean or std");
  if (std < 0.0) throw std::invalid_argument("gaussian: negative std");
  Tensor<T> out(std::move(shape));
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<T>(mean + std * rng.gaussian());
  return out;
}

template <typename T>
void fill_gaussian(Tensor<T>& t, double mean, double std, Rng& rng) {
  if (!std::isfinite(mean) || !std::isfinite(std))
    throw std::invalid_argument("gaussian: non-finite mean or std");
  if (std < 0.0) throw std::invalid_argument("gaussian: negative std");
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(mean + std * rng.gaussian());
}

/// C = A (N x K) * B (K x M).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw std::invalid_argument("matmul: expects rank-2 tensors, got " + shape_str(a.shape()) +
                                " and " + shape_str(b.shape()));
  if (a.extent(1) != b.extent(0))
    throw std::invalid_argument("matmul: inner extents differ, " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  const std::size_t n = a.extent(0), k = a.extent(1), m = b.extent(1);
  Tensor<T> c({n, m});
  detail::gemm(false, false, n, m, k, T(1), a.data(), k, b.data(), m, T(0), c.data(), m);
  return c;
}

/// Elementwise max(x, 0).
template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

enum class Padding { Same, Valid };

struct ConvGeometry {
  std::size_t kh, kw, cin, cout;
  std::size_t stride;
  std::size_t pad_top, pad_left, pad_bottom, pad_right;
  std::size_t h_in, w_in, h_out, w_out;
};

/// Padding and output extents for a strided 2-D convolution. SAME uses the
/// fixed rule pad_total = k - 1 split as (floor(total/2), rest), independent
/// of the input size, followed by a VALID convolution.
inline ConvGeometry conv_geometry(const Shape& input, const Shape& kernel, std::size_t stride,
                                  Padding padding) {
  if (input.size() != 4)
    throw std::invalid_argument("conv2d: input must be N x H x W x C, got " + shape_str(input));
  if (kernel.size() != 4)
    throw std::invalid_argument("conv2d: kernel must be kh x kw x Cin x Cout, got " +
                                shape_str(kernel));
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (input[3] != kernel[2])
    throw std::invalid_argument("conv2d: input channels " + std::to_string(input[3]) +
                                " != kernel Cin " + std::to_string(kernel[2]));
  ConvGeometry g{};
  g.kh = kernel[0];
  g.kw = kernel[1];
  g.cin = kernel[2];
  g.cout = kernel[3];
  g.stride = stride;
  g.h_in = input[1];
  g.w_in = input[2];
  if (padding == Padding::Same) {
    const std::size_t pad_h = g.kh - 1, pad_w = g.kw - 1;
    g.pad_top = pad_h / 2;
    g.pad_bottom = pad_h - g.pad_top;
    g.pad_left = pad_w / 2;
    g.pad_right = pad_w - g.pad_left;
  }
  const std::size_t h_pad = g.h_in + g.pad_top + g.pad_bottom;
  const std::size_t w_pad = g.w_in + g.pad_left + g.pad_right;
  if (g.kh > h_pad || g.kw > w_pad)
    throw std::invalid_argument("conv2d: kernel larger than padded input");
  g.h_out = (h_pad - g.kh) / stride + 1;
  g.w_out = (w_pad - g.kw) / stride + 1;
  return g;
}

namespace detail {

// Gathers conv patches into a (N * Ho * Wo) x (kh * kw * Cin) matrix.
template <typename T>
Tensor<T> im2col(const Tensor<T>& x, const ConvGeometry& g) {
  const std::size_t n = x.extent(0);
  const std::size_t cols = g.kh * g.kw * g.cin;
  Tensor<T> out({n * g.h_out * g.w_out, cols});
  std::size_t row = 0;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oh = 0; oh < g.h_out; ++oh) {
      for (std::size_t ow = 0; ow < g.w_out; ++ow, ++row) {
        T* dst = &out(row, 0);
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const std::ptrdiff_t ih =
              static_cast<std::ptrdiff_t>(oh * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad_top);
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad_left);
            T* cell = dst + (ky * g.kw + kx) * g.cin;
            if (ih < 0 || iw < 0 || ih >= static_cast<std::ptrdiff_t>(g.h_in) ||
                iw >= static_cast<std::ptrdiff_t>(g.w_in)) {
              std::fill(cell, cell + g.cin, T(0));
            } else {
              const T* src = &x(b, static_cast<std::size_t>(ih), static_cast<std::size_t>(iw), 0);
              std::copy(src, src + g.cin, cell);
            }
          }
        }
      }
    }
  }
  return out;
}

// Scatter-adds column gradients back onto the input layout.
template <typename T>
void col2im_add(const Tensor<T>& cols, const ConvGeometry& g, Tensor<T>& grad_x) {
  const std::size_t n = grad_x.extent(0);
  std::size_t row = 0;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oh = 0; oh < g.h_out; ++oh) {
      for (std::size_t ow = 0; ow < g.w_out; ++ow, ++row) {
        const T* src_row = &cols(row, 0);
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const std::ptrdiff_t ih =
              static_cast<std::ptrdiff_t>(oh * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad_top);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h_in)) continue;
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad_left);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.w_in)) continue;
            const T* cell = src_row + (ky * g.kw + kx) * g.cin;
            T* dst = &grad_x(b, static_cast<std::size_t>(ih), static_cast<std::size_t>(iw), 0);
            for (std::size_t c = 0; c < g.cin; ++c) dst[c] += cell[c];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Strided 2-D cross-correlation (no kernel flip) over NHWC input.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride,
                 Padding padding) {
  const ConvGeometry g = conv_geometry(input.shape(), kernel.shape(), stride, padding);
  const std::size_t n = input.extent(0);
  const Tensor<T> cols = detail::im2col(input, g);
  const std::size_t rows = cols.extent(0), k = cols.extent(1);
  Tensor<T> out({rows, g.cout});
  detail::gemm(false, false, rows, g.cout, k, T(1), cols.data(), k, kernel.data(), g.cout, T(0),
               out.data(), g.cout);
  return out.reshaped({n, g.h_out, g.w_out, g.cout});
}

/// Gradients of conv2d with respect to input and kernel.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel,
                                                const Tensor<T>& grad_out, std::size_t stride,
                                                Padding padding) {
  const ConvGeometry g = conv_geometry(input.shape(), kernel.shape(), stride, padding);
  const std::size_t n = input.extent(0);
  if (grad_out.shape() != Shape{n, g.h_out, g.w_out, g.cout})
    throw std::invalid_argument("conv2d_backward: grad shape mismatch");
  const Tensor<T> cols = detail::im2col(input, g);
  const std::size_t rows = cols.extent(0), k = cols.extent(1);

  Tensor<T> grad_kernel({g.kh, g.kw, g.cin, g.cout});
  detail::gemm(true, false, k, g.cout, rows, T(1), cols.data(), k, grad_out.data(), g.cout, T(0),
               grad_kernel.data(), g.cout);

  Tensor<T> grad_cols({rows, k});
  detail::gemm(false, true, rows, k, g.cout, T(1), grad_out.data(), g.cout, kernel.data(), g.cout,
               T(0), grad_cols.data(), k);
  Tensor<T> grad_x(input.shape());
  detail::col2im_add(grad_cols, g, grad_x);
  return {std::move(grad_x), std::move(grad_kernel)};
}

template <typename T>
struct ChannelMoments {
  Tensor<T> mean;  // shape {C}
  Tensor<T> var;   // shape {C}, biased (divide by Z)
};

/// Per-channel mean and biased variance, reducing every axis but the last.
template <typename T>
ChannelMoments<T> channel_moments(const Tensor<T>& x) {
  if (x.rank() < 1) throw std::invalid_argument("channel_moments: rank-0 tensor");
  const std::size_t c = x.extent(x.rank() - 1);
  const std::size_t z = x.size() / c;
  std::vector<double> sum(c, 0.0), sumsq(c, 0.0);
  const T* p = x.data();
  for (std::size_t i = 0; i < z; ++i, p += c) {
    for (std::size_t j = 0; j < c; ++j) {
      const double v = static_cast<double>(p[j]);
      sum[j] += v;
      sumsq[j] += v * v;
    }
  }
  ChannelMoments<T> m{Tensor<T>({c}), Tensor<T>({c})};
  for (std::size_t j = 0; j < c; ++j) {
    const double mean = sum[j] / static_cast<double>(z);
    const double var = sumsq[j] / static_cast<double>(z) - mean * mean;
    m.mean[j] = static_cast<T>(mean);
    m.var[j] = static_cast<T>(var > 0.0 ? var : 0.0);
  }
  return m;
}

template <typename T>
struct XentResult {
  double loss;            // mean cross-entropy over the batch
  Tensor<T> grad_logits;  // (softmax - onehot) / N
};

/// Softmax cross-entropy with max-subtraction stabilization.
template <typename T>
XentResult<T> softmax_xent(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2)
    throw std::invalid_argument("softmax_xent: logits must be N x K, got " +
                                shape_str(logits.shape()));
  const std::size_t n = logits.extent(0), k = logits.extent(1);
  if (labels.size() != n) throw std::invalid_argument("softmax_xent: label count mismatch");
  XentResult<T> res{0.0, Tensor<T>(logits.shape())};
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= k)
      throw std::invalid_argument("softmax_xent: label " + std::to_string(label) +
                                  " out of range [0, " + std::to_string(k) + ")");
    double max_logit = static_cast<double>(logits(i, 0));
    for (std::size_t j = 1; j < k; ++j)
      max_logit = std::max(max_logit, static_cast<double>(logits(i, j)));
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j)
      denom += std::exp(static_cast<double>(logits(i, j)) - max_logit);
    const double log_denom = std::log(denom);
    total += log_denom - (static_cast<double>(logits(i, label)) - max_logit);
    for (std::size_t j = 0; j < k; ++j) {
      const double p = std::exp(static_cast<double>(logits(i, j)) - max_logit - log_denom);
      const double onehot = (static_cast<std::size_t>(label) == j) ? 1.0 : 0.0;
      res.grad_logits(i, j) = static_cast<T>((p - onehot) / static_cast<double>(n));
    }
  }
  res.loss = total / static_cast<double>(n);
  return res;
}

}  // namespace resprop
