#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

namespace bicap::nn {

template <class T>
T softplus(T x) {
  return std::max(x, T{0}) + std::log1p(std::exp(-std::abs(x)));
}

template <class T>
T sigmoid(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

// Exact (erf) GELU.
template <class T>
T gelu(T x) {
  return T{0.5} * x * (T{1} + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <class T>
T gelu_grad(T x) {
  const T cdf = T{0.5} * (T{1} + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T{-0.5} * x * x) / std::sqrt(T{2} * std::numbers::pi_v<T>);
  return cdf + x * pdf;
}

template <class T>
std::vector<T> softmax(std::span<const T> scores) {
  std::vector<T> out(scores.size());
  const T peak = *std::max_element(scores.begin(), scores.end());
  T sum{};
  for (std::size_t i = 0; i < scores.size(); ++i) sum += out[i] = std::exp(scores[i] - peak);
  for (T& v : out) v /= sum;
  return out;
}

template <class T>
T log_sum_exp(std::span<const T> xs) {
  const T peak = *std::max_element(xs.begin(), xs.end());
  T sum{};
  for (T x : xs) sum += std::exp(x - peak);
  return peak + std::log(sum);
}

/// Layer normalization over one vector. Keeps what backward needs.
template <class T>
struct LayerNormCache {
  std::vector<T> normalized;
  T inv_std{};
};

template <class T>
std::vector<T> layer_norm(std::span<const T> x, std::span<const T> gain, std::span<const T> bias, T eps,
                          LayerNormCache<T>* cache = nullptr) {
  const auto n = static_cast<T>(x.size());
  T mean{};
  for (T v : x) mean += v;
  mean /= n;
  T var{};
  for (T v : x) var += (v - mean) * (v - mean);
  var /= n;
  const T inv_std = T{1} / std::sqrt(var + eps);
  std::vector<T> xhat(x.size()), out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xhat[i] = (x[i] - mean) * inv_std;
    out[i] = gain[i] * xhat[i] + bias[i];
  }
  if (cache) *cache = {std::move(xhat), inv_std};
  return out;
}

/// Accumulates d_gain/d_bias and returns dx.
template <class T>
std::vector<T> layer_norm_backward(const LayerNormCache<T>& cache, std::span<const T> gain, std::span<const T> dout,
                                   std::span<T> d_gain, std::span<T> d_bias) {
  const std::size_t n = dout.size();
  std::vector<T> dxhat(n);
  T mean_dxhat{}, mean_dxhat_xhat{};
  for (std::size_t i = 0; i < n; ++i) {
    d_gain[i] += dout[i] * cache.normalized[i];
    d_bias[i] += dout[i];
    dxhat[i] = dout[i] * gain[i];
    mean_dxhat += dxhat[i];
    mean_dxhat_xhat += dxhat[i] * cache.normalized[i];
  }
  mean_dxhat /= static_cast<T>(n);
  mean_dxhat_xhat /= static_cast<T>(n);
  std::vector<T> dx(n);
  for (std::size_t i = 0; i < n; ++i)
    dx[i] = cache.inv_std * (dxhat[i] - mean_dxhat - cache.normalized[i] * mean_dxhat_xhat);
  return dx;
}

}  // namespace bicap::nn
