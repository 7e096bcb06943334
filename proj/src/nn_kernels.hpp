#pragma once

// Dense kernels shared by the encoder forward/backward passes. All loops are
// written so each output element is produced by exactly one iteration with a
// fixed serial summation order; OpenMP parallelism over independent rows keeps
// results bit-reproducible.

#include <cmath>
#include <cstdint>
#include <vector>

namespace notebert::kernels {

// C (M,N) = A (M,K) @ B (K,N), optionally accumulating into C.
template <typename T>
void matmul(const T* A, const T* B, T* C, int M, int K, int N, bool acc = false) {
#pragma omp parallel for schedule(static)
  for (int m = 0; m < M; ++m) {
    T* crow = C + static_cast<int64_t>(m) * N;
    if (!acc)
      for (int n = 0; n < N; ++n) crow[n] = T(0);
    const T* arow = A + static_cast<int64_t>(m) * K;
    for (int k = 0; k < K; ++k) {
      T a = arow[k];
      if (a == T(0)) continue;
      const T* brow = B + static_cast<int64_t>(k) * N;
      for (int n = 0; n < N; ++n) crow[n] += a * brow[n];
    }
  }
}

// C (M,N) = A (M,K) @ B^T where B is (N,K).
template <typename T>
void matmul_nt(const T* A, const T* B, T* C, int M, int K, int N, bool acc = false) {
#pragma omp parallel for schedule(static)
  for (int m = 0; m < M; ++m) {
    const T* arow = A + static_cast<int64_t>(m) * K;
    T* crow = C + static_cast<int64_t>(m) * N;
    for (int n = 0; n < N; ++n) {
      const T* brow = B + static_cast<int64_t>(n) * K;
      T sum = acc ? crow[n] : T(0);
      for (int k = 0; k < K; ++k) sum += arow[k] * brow[k];
      crow[n] = sum;
    }
  }
}

// C (K,N) (+)= A^T @ B where A is (M,K), B is (M,N). Used for weight grads.
template <typename T>
void matmul_tn(const T* A, const T* B, T* C, int M, int K, int N, bool acc = true) {
#pragma omp parallel for schedule(static)
  for (int k = 0; k < K; ++k) {
    T* crow = C + static_cast<int64_t>(k) * N;
    if (!acc)
      for (int n = 0; n < N; ++n) crow[n] = T(0);
    for (int m = 0; m < M; ++m) {
      T a = A[static_cast<int64_t>(m) * K + k];
      if (a == T(0)) continue;
      const T* brow = B + static_cast<int64_t>(m) * N;
      for (int n = 0; n < N; ++n) crow[n] += a * brow[n];
    }
  }
}

template <typename T>
void add_bias(T* X, const T* b, int M, int N) {
#pragma omp parallel for schedule(static)
  for (int m = 0; m < M; ++m) {
    T* row = X + static_cast<int64_t>(m) * N;
    for (int n = 0; n < N; ++n) row[n] += b[n];
  }
}

// db (N) += column sums of dY (M,N). Parallel over columns, serial over rows.
template <typename T>
void bias_grad(const T* dY, T* db, int M, int N) {
#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    T sum = T(0);
    for (int m = 0; m < M; ++m) sum += dY[static_cast<int64_t>(m) * N + n];
    db[n] += sum;
  }
}

inline constexpr double kGeluK = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluC = 0.044715;

template <typename T>
T gelu(T x) {
  T u = static_cast<T>(kGeluK) * (x + static_cast<T>(kGeluC) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
T gelu_grad(T x) {
  T u = static_cast<T>(kGeluK) * (x + static_cast<T>(kGeluC) * x * x * x);
  T t = std::tanh(u);
  T du = static_cast<T>(kGeluK) * (T(1) + T(3) * static_cast<T>(kGeluC) * x * x);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

// Per-position layer norm over the last dimension. Means/variances accumulate
// in double regardless of T.
template <typename T>
void layernorm_forward(const T* X, const T* gain, const T* bias, T* Y, T* mean_out, T* rstd_out,
                       int M, int N, double eps = 1e-12) {
#pragma omp parallel for schedule(static)
  for (int m = 0; m < M; ++m) {
    const T* x = X + static_cast<int64_t>(m) * N;
    T* y = Y + static_cast<int64_t>(m) * N;
    double mu = 0;
    for (int n = 0; n < N; ++n) mu += static_cast<double>(x[n]);
    mu /= N;
    double var = 0;
    for (int n = 0; n < N; ++n) {
      double d = static_cast<double>(x[n]) - mu;
      var += d * d;
    }
    var /= N;
    double rstd = 1.0 / std::sqrt(var + eps);
    mean_out[m] = static_cast<T>(mu);
    rstd_out[m] = static_cast<T>(rstd);
    for (int n = 0; n < N; ++n) {
      T xhat = static_cast<T>((static_cast<double>(x[n]) - mu) * rstd);
      y[n] = xhat * gain[n] + bias[n];
    }
  }
}

template <typename T>
void layernorm_backward(const T* dY, const T* X, const T* gain, const T* mean, const T* rstd,
                        T* dX, T* dgain, T* dbias, int M, int N) {
  // Parameter grads: parallel over columns, serial over rows.
#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    T gsum = T(0), bsum = T(0);
    for (int m = 0; m < M; ++m) {
      int64_t i = static_cast<int64_t>(m) * N + n;
      T xhat = (X[i] - mean[m]) * rstd[m];
      gsum += dY[i] * xhat;
      bsum += dY[i];
    }
    dgain[n] += gsum;
    dbias[n] += bsum;
  }
  // Input grads per position.
#pragma omp parallel for schedule(static)
  for (int m = 0; m < M; ++m) {
    const T* dy = dY + static_cast<int64_t>(m) * N;
    const T* x = X + static_cast<int64_t>(m) * N;
    T* dx = dX + static_cast<int64_t>(m) * N;
    double sum_dyg = 0, sum_dyg_xhat = 0;
    for (int n = 0; n < N; ++n) {
      double g = static_cast<double>(dy[n]) * static_cast<double>(gain[n]);
      double xhat = (static_cast<double>(x[n]) - static_cast<double>(mean[m])) *
                    static_cast<double>(rstd[m]);
      sum_dyg += g;
      sum_dyg_xhat += g * xhat;
    }
    sum_dyg /= N;
    sum_dyg_xhat /= N;
    for (int n = 0; n < N; ++n) {
      double g = static_cast<double>(dy[n]) * static_cast<double>(gain[n]);
      double xhat = (static_cast<double>(x[n]) - static_cast<double>(mean[m])) *
                    static_cast<double>(rstd[m]);
      dx[n] = static_cast<T>((g - sum_dyg - xhat * sum_dyg_xhat) * static_cast<double>(rstd[m]));
    }
  }
}

// Row-wise log-softmax returning per-row log-probabilities; accumulation in
// double for the numerically sensitive sums.
template <typename T>
void log_softmax_row(const T* logits, double* logp, int N) {
  double mx = -1e300;
  for (int n = 0; n < N; ++n) mx = std::max(mx, static_cast<double>(logits[n]));
  double sum = 0;
  for (int n = 0; n < N; ++n) sum += std::exp(static_cast<double>(logits[n]) - mx);
  double lse = mx + std::log(sum);
  for (int n = 0; n < N; ++n) logp[n] = static_cast<double>(logits[n]) - lse;
}

}  // namespace notebert::kernels
