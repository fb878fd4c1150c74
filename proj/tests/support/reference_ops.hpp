#pragma once

// Naive reference implementations the fast paths are checked against.
// Direct loops, no blocking, no reuse: slow but obviously correct.

#include <cstdint>
#include <random>
#include <vector>

#include "cresnet/tensor.hpp"

namespace refops {

template <typename T>
cresnet::Tensor<T> random_tensor(cresnet::Shape shape, std::uint32_t seed, T scale = T(1)) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<T> dist(T(-1), T(1));
  std::vector<T> data(static_cast<size_t>(cresnet::numel(shape)));
  for (auto& v : data) v = dist(rng) * scale;
  return cresnet::Tensor<T>::from_data(std::move(shape), std::move(data));
}

// x (N,Cin,H,W), w (Cout,Cin,k,k), zero padding, no bias.
template <typename T>
std::vector<T> naive_conv2d(const std::vector<T>& x, std::int64_t N, std::int64_t Cin,
                            std::int64_t H, std::int64_t W, const std::vector<T>& w,
                            std::int64_t Cout, std::int64_t k, std::int64_t stride,
                            std::int64_t pad, std::int64_t& Ho, std::int64_t& Wo) {
  Ho = (H + 2 * pad - k) / stride + 1;
  Wo = (W + 2 * pad - k) / stride + 1;
  std::vector<T> out(static_cast<size_t>(N * Cout * Ho * Wo), T(0));
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t co = 0; co < Cout; ++co)
      for (std::int64_t oh = 0; oh < Ho; ++oh)
        for (std::int64_t ow = 0; ow < Wo; ++ow) {
          T acc = 0;
          for (std::int64_t ci = 0; ci < Cin; ++ci)
            for (std::int64_t kh = 0; kh < k; ++kh)
              for (std::int64_t kw = 0; kw < k; ++kw) {
                const std::int64_t ih = oh * stride + kh - pad;
                const std::int64_t iw = ow * stride + kw - pad;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += x[static_cast<size_t>(((n * Cin + ci) * H + ih) * W + iw)] *
                       w[static_cast<size_t>(((co * Cin + ci) * k + kh) * k + kw)];
              }
          out[static_cast<size_t>(((n * Cout + co) * Ho + oh) * Wo + ow)] = acc;
        }
  return out;
}

// Training-mode batchnorm forward: per-channel biased batch stats, affine.
template <typename T>
std::vector<T> naive_batchnorm(const std::vector<T>& x, std::int64_t N, std::int64_t C,
                               std::int64_t H, std::int64_t W, const std::vector<T>& gamma,
                               const std::vector<T>& beta, T eps) {
  std::vector<T> out(x.size());
  const T m = static_cast<T>(N * H * W);
  for (std::int64_t c = 0; c < C; ++c) {
    T mean = 0;
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t i = 0; i < H * W; ++i)
        mean += x[static_cast<size_t>((n * C + c) * H * W + i)];
    mean /= m;
    T var = 0;
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t i = 0; i < H * W; ++i) {
        const T d = x[static_cast<size_t>((n * C + c) * H * W + i)] - mean;
        var += d * d;
      }
    var /= m;
    const T inv = T(1) / std::sqrt(var + eps);
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t i = 0; i < H * W; ++i) {
        const size_t at = static_cast<size_t>((n * C + c) * H * W + i);
        out[at] = gamma[static_cast<size_t>(c)] * (x[at] - mean) * inv +
                  beta[static_cast<size_t>(c)];
      }
  }
  return out;
}

template <typename T>
T max_abs_diff(const std::vector<T>& a, const std::vector<T>& b) {
  T worst = 0;
  for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace refops
