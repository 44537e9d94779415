#pragma once

#include <cmath>

namespace ardiff::detail {

constexpr double kLayerNormEps = 1e-5;

// Layernorm over one position's feature vector; writes y and the saved
// statistics needed by the backward pass.
template <typename T>
void layernorm_row(const T* x, int d, const T* gamma, const T* beta, T* y,
                   T* mean_out, T* rstd_out) {
  T mean = 0;
  for (int i = 0; i < d; ++i) mean += x[i];
  mean /= static_cast<T>(d);
  T var = 0;
  for (int i = 0; i < d; ++i) {
    T c = x[i] - mean;
    var += c * c;
  }
  var /= static_cast<T>(d);
  T rstd = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
  for (int i = 0; i < d; ++i) {
    y[i] = gamma[i] * ((x[i] - mean) * rstd) + beta[i];
  }
  *mean_out = mean;
  *rstd_out = rstd;
}

// tanh-approximation GELU and its derivative.
template <typename T>
T gelu(T x) {
  const T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  const T a = static_cast<T>(0.044715);
  T u = c * (x + a * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
T gelu_grad(T x) {
  const T c = static_cast<T>(0.7978845608028654);
  const T a = static_cast<T>(0.044715);
  T u = c * (x + a * x * x * x);
  T th = std::tanh(u);
  T sech2 = T(1) - th * th;
  return T(0.5) * (T(1) + th) + T(0.5) * x * sech2 * c * (T(1) + T(3) * a * x * x);
}

}  // namespace ardiff::detail
