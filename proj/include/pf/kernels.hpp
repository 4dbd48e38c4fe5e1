#pragma once

// Data-parallel compute kernels. Every kernel is parallelized over independent
// output elements (omp parallel for, static schedule) and each output element
// is accumulated in a fixed serial order. Consequence: results are bit-identical
// for any thread count, and identical to the serial reference in
// pf::kernels::serial, which runs the same per-output routine without the
// parallel dispatch.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <vector>

#include "pf/tensor.hpp"

namespace pf::kernels {

namespace detail {

template <typename F>
inline void par_for(std::size_t n, F&& f) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i)
    f(static_cast<std::size_t>(i));
}

template <typename F>
inline void ser_for(std::size_t n, F&& f) {
  for (std::size_t i = 0; i < n; ++i) f(i);
}

template <bool Par, typename F>
inline void dispatch(std::size_t n, F&& f) {
  if constexpr (Par)
    par_for(n, f);
  else
    ser_for(n, f);
}

// ---- matmul: C[M,N] = A[M,K] * B[K,N]; per-element sum in ascending k ----
template <typename T, bool Par>
void matmul_impl(const T* a, const T* b, T* c, std::size_t M, std::size_t K, std::size_t N) {
  dispatch<Par>(M, [&](std::size_t m) {
    T* crow = c + m * N;
    std::fill(crow, crow + N, T(0));
    const T* arow = a + m * K;
    for (std::size_t k = 0; k < K; ++k) {
      const T amk = arow[k];
      const T* brow = b + k * N;
#pragma omp simd
      for (std::size_t n = 0; n < N; ++n) crow[n] += amk * brow[n];
    }
  });
}

// C[K,N] = A^T[K,M] * B[M,N]  (A stored [M,K]); per-element sum ascending m
template <typename T, bool Par>
void matmul_at_b_impl(const T* a, const T* b, T* c, std::size_t M, std::size_t K, std::size_t N) {
  dispatch<Par>(K, [&](std::size_t k) {
    T* crow = c + k * N;
    std::fill(crow, crow + N, T(0));
    for (std::size_t m = 0; m < M; ++m) {
      const T amk = a[m * K + k];
      const T* brow = b + m * N;
#pragma omp simd
      for (std::size_t n = 0; n < N; ++n) crow[n] += amk * brow[n];
    }
  });
}

// C[M,K] = A[M,N] * B^T[N->K rows]  (B stored [K,N]); per-element sum ascending n
template <typename T, bool Par>
void matmul_a_bt_impl(const T* a, const T* b, T* c, std::size_t M, std::size_t N, std::size_t K) {
  dispatch<Par>(M, [&](std::size_t m) {
    const T* arow = a + m * N;
    T* crow = c + m * K;
    for (std::size_t k = 0; k < K; ++k) {
      const T* brow = b + k * N;
      T acc = T(0);
#pragma omp simd reduction(+ : acc)
      for (std::size_t n = 0; n < N; ++n) acc += arow[n] * brow[n];
      crow[k] = acc;
    }
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// parallel entry points
// ---------------------------------------------------------------------------

template <typename T>
void matmul(const T* a, const T* b, T* c, std::size_t M, std::size_t K, std::size_t N) {
  detail::matmul_impl<T, true>(a, b, c, M, K, N);
}
template <typename T>
void matmul_at_b(const T* a, const T* b, T* c, std::size_t M, std::size_t K, std::size_t N) {
  detail::matmul_at_b_impl<T, true>(a, b, c, M, K, N);
}
template <typename T>
void matmul_a_bt(const T* a, const T* b, T* c, std::size_t M, std::size_t N, std::size_t K) {
  detail::matmul_a_bt_impl<T, true>(a, b, c, M, N, K);
}

/// Batched matmul: C[b] = A[b] * B[b] for b in [0,B).
template <typename T>
void bmm(const T* a, const T* b, T* c, std::size_t B, std::size_t M, std::size_t K,
         std::size_t N) {
  detail::dispatch<true>(B * M, [&](std::size_t bm) {
    const std::size_t bi = bm / M, m = bm % M;
    const T* ab = a + bi * M * K + m * K;
    const T* bb = b + bi * K * N;
    T* cb = c + bi * M * N + m * N;
    std::fill(cb, cb + N, T(0));
    for (std::size_t k = 0; k < K; ++k) {
      const T amk = ab[k];
      const T* brow = bb + k * N;
#pragma omp simd
      for (std::size_t n = 0; n < N; ++n) cb[n] += amk * brow[n];
    }
  });
}

namespace serial {
template <typename T>
void matmul(const T* a, const T* b, T* c, std::size_t M, std::size_t K, std::size_t N) {
  detail::matmul_impl<T, false>(a, b, c, M, K, N);
}
template <typename T>
void matmul_at_b(const T* a, const T* b, T* c, std::size_t M, std::size_t K, std::size_t N) {
  detail::matmul_at_b_impl<T, false>(a, b, c, M, K, N);
}
template <typename T>
void matmul_a_bt(const T* a, const T* b, T* c, std::size_t M, std::size_t N, std::size_t K) {
  detail::matmul_a_bt_impl<T, false>(a, b, c, M, N, K);
}
}  // namespace serial

// ---------------------------------------------------------------------------
// 1-D convolution, same zero padding (left pad (K-1)/2)
// x: [R,L] rows, w: [F,K] filters, bias: [F]
// ---------------------------------------------------------------------------

inline std::size_t conv_pad_left(std::size_t K) { return (K - 1) / 2; }

namespace detail {

template <typename T>
void pad_row(const T* x, std::size_t L, std::size_t K, std::vector<T>& xpad) {
  const std::size_t pl = conv_pad_left(K);
  xpad.assign(L + K - 1, T(0));
  std::memcpy(xpad.data() + pl, x, L * sizeof(T));
}

template <typename T, bool Par>
void conv1d_same_impl(const T* x, const T* w, const T* bias, T* y, std::size_t R, std::size_t L,
                      std::size_t F, std::size_t K) {
  dispatch<Par>(R, [&](std::size_t r) {
    std::vector<T> xpad;
    pad_row(x + r * L, L, K, xpad);
    for (std::size_t f = 0; f < F; ++f) {
      T* yrow = y + (r * F + f) * L;
      std::fill(yrow, yrow + L, bias ? bias[f] : T(0));
      const T* wf = w + f * K;
      for (std::size_t k = 0; k < K; ++k) {
        const T wk = wf[k];
        const T* xs = xpad.data() + k;
#pragma omp simd
        for (std::size_t t = 0; t < L; ++t) yrow[t] += xs[t] * wk;
      }
    }
  });
}

// fused conv + max over positions; records argmax for the backward pass
template <typename T, bool Par>
void conv1d_max_impl(const T* x, const T* w, const T* bias, T* val, std::int32_t* idx,
                     std::size_t R, std::size_t L, std::size_t F, std::size_t K) {
  dispatch<Par>(R, [&](std::size_t r) {
    std::vector<T> xpad, tmp(L);
    pad_row(x + r * L, L, K, xpad);
    for (std::size_t f = 0; f < F; ++f) {
      const T* wf = w + f * K;
      std::fill(tmp.begin(), tmp.end(), T(0));
      for (std::size_t k = 0; k < K; ++k) {
        const T wk = wf[k];
        const T* xs = xpad.data() + k;
        T* out = tmp.data();
#pragma omp simd
        for (std::size_t t = 0; t < L; ++t) out[t] += xs[t] * wk;
      }
      // first-max tie rule
      T best = tmp[0];
      std::size_t bidx = 0;
      for (std::size_t t = 1; t < L; ++t)
        if (tmp[t] > best) {
          best = tmp[t];
          bidx = t;
        }
      val[r * F + f] = best + (bias ? bias[f] : T(0));
      idx[r * F + f] = static_cast<std::int32_t>(bidx);
    }
  });
}

}  // namespace detail

template <typename T>
void conv1d_same(const T* x, const T* w, const T* bias, T* y, std::size_t R, std::size_t L,
                 std::size_t F, std::size_t K) {
  detail::conv1d_same_impl<T, true>(x, w, bias, y, R, L, F, K);
}

/// dW[F,K] and dBias[F] for conv1d_same given upstream gy[R,F,L].
template <typename T>
void conv1d_same_grad_w(const T* x, const T* gy, T* dw, T* dbias, std::size_t R, std::size_t L,
                        std::size_t F, std::size_t K) {
  const std::size_t pl = conv_pad_left(K);
  detail::par_for(F, [&](std::size_t f) {
    for (std::size_t k = 0; k < K; ++k) {
      T acc = T(0);
      for (std::size_t r = 0; r < R; ++r) {
        const T* gr = gy + (r * F + f) * L;
        const T* xr = x + r * L;
        // y[t] sums x[t + k - pl]; valid t range for this k
        const std::size_t t0 = (pl > k) ? (pl - k) : 0;
        const std::size_t t1 = std::min(L, L + pl - k);
        for (std::size_t t = t0; t < t1; ++t) acc += gr[t] * xr[t + k - pl];
      }
      dw[f * K + k] = acc;
    }
    if (dbias) {
      T acc = T(0);
      for (std::size_t r = 0; r < R; ++r) {
        const T* gr = gy + (r * F + f) * L;
        for (std::size_t t = 0; t < L; ++t) acc += gr[t];
      }
      dbias[f] = acc;
    }
  });
}

/// dX[R,L] for conv1d_same.
template <typename T>
void conv1d_same_grad_x(const T* gy, const T* w, T* dx, std::size_t R, std::size_t L,
                        std::size_t F, std::size_t K) {
  const std::size_t pl = conv_pad_left(K);
  detail::par_for(R, [&](std::size_t r) {
    std::vector<T> dxp(L + K - 1, T(0));
    for (std::size_t f = 0; f < F; ++f) {
      const T* gr = gy + (r * F + f) * L;
      const T* wf = w + f * K;
      for (std::size_t k = 0; k < K; ++k) {
        const T wk = wf[k];
        T* dst = dxp.data() + k;
#pragma omp simd
        for (std::size_t t = 0; t < L; ++t) dst[t] += gr[t] * wk;
      }
    }
    std::memcpy(dx + r * L, dxp.data() + pl, L * sizeof(T));
  });
}

template <typename T>
void conv1d_max(const T* x, const T* w, const T* bias, T* val, std::int32_t* idx, std::size_t R,
                std::size_t L, std::size_t F, std::size_t K) {
  detail::conv1d_max_impl<T, true>(x, w, bias, val, idx, R, L, F, K);
}

template <typename T>
void conv1d_max_grad(const T* x, const T* w, const T* gval, const std::int32_t* idx, T* dx,
                     T* dw, T* dbias, std::size_t R, std::size_t L, std::size_t F,
                     std::size_t K) {
  const std::size_t pl = conv_pad_left(K);
  // dW: owner per filter, serial over rows
  detail::par_for(F, [&](std::size_t f) {
    T* dwf = dw + f * K;
    std::fill(dwf, dwf + K, T(0));
    T db = T(0);
    for (std::size_t r = 0; r < R; ++r) {
      const T g = gval[r * F + f];
      db += g;
      const std::size_t p = static_cast<std::size_t>(idx[r * F + f]);
      const T* xr = x + r * L;
      const std::size_t k0 = (pl > p) ? (pl - p) : 0;
      const std::size_t k1 = std::min(K, L + pl - p);
      for (std::size_t k = k0; k < k1; ++k) dwf[k] += g * xr[p + k - pl];
    }
    if (dbias) dbias[f] = db;
  });
  // dX: owner per row, serial over filters
  detail::par_for(R, [&](std::size_t r) {
    T* dxr = dx + r * L;
    std::fill(dxr, dxr + L, T(0));
    for (std::size_t f = 0; f < F; ++f) {
      const T g = gval[r * F + f];
      const std::size_t p = static_cast<std::size_t>(idx[r * F + f]);
      const T* wf = w + f * K;
      const std::size_t k0 = (pl > p) ? (pl - p) : 0;
      const std::size_t k1 = std::min(K, L + pl - p);
      for (std::size_t k = k0; k < k1; ++k) dxr[p + k - pl] += g * wf[k];
    }
  });
}

namespace serial {
template <typename T>
void conv1d_same(const T* x, const T* w, const T* bias, T* y, std::size_t R, std::size_t L,
                 std::size_t F, std::size_t K) {
  detail::conv1d_same_impl<T, false>(x, w, bias, y, R, L, F, K);
}
template <typename T>
void conv1d_max(const T* x, const T* w, const T* bias, T* val, std::int32_t* idx, std::size_t R,
                std::size_t L, std::size_t F, std::size_t K) {
  detail::conv1d_max_impl<T, false>(x, w, bias, val, idx, R, L, F, K);
}
}  // namespace serial

/// Strided valid 1-D convolution, multi-channel; no gradient (frozen projector).
/// x: [Cin, L], w: [Cout, Cin, K], y: [Cout, Lout], Lout = (L - K) / stride + 1.
template <typename T>
void conv1d_valid_strided(const T* x, const T* w, const T* bias, T* y, std::size_t Cin,
                          std::size_t L, std::size_t Cout, std::size_t K, std::size_t stride) {
  const std::size_t Lout = (L - K) / stride + 1;
  detail::par_for(Cout, [&](std::size_t co) {
    T* yrow = y + co * Lout;
    for (std::size_t t = 0; t < Lout; ++t) {
      T acc = bias ? bias[co] : T(0);
      const std::size_t x0 = t * stride;
      for (std::size_t ci = 0; ci < Cin; ++ci) {
        const T* xr = x + ci * L + x0;
        const T* wr = w + (co * Cin + ci) * K;
#pragma omp simd reduction(+ : acc)
        for (std::size_t k = 0; k < K; ++k) acc += xr[k] * wr[k];
      }
      yrow[t] = acc;
    }
  });
}

// ---------------------------------------------------------------------------
// row-wise ops (softmax / layer norm over the trailing dimension)
// ---------------------------------------------------------------------------

template <typename T>
void softmax_rows(const T* x, T* y, std::size_t rows, std::size_t D) {
  detail::par_for(rows, [&](std::size_t r) {
    const T* xr = x + r * D;
    T* yr = y + r * D;
    T mx = xr[0];
    for (std::size_t i = 1; i < D; ++i) mx = std::max(mx, xr[i]);
    T sum = T(0);
    for (std::size_t i = 0; i < D; ++i) {
      yr[i] = std::exp(xr[i] - mx);
      sum += yr[i];
    }
    const T inv = T(1) / sum;
    for (std::size_t i = 0; i < D; ++i) yr[i] *= inv;
  });
}

template <typename T>
void softmax_rows_grad(const T* y, const T* gy, T* gx, std::size_t rows, std::size_t D) {
  detail::par_for(rows, [&](std::size_t r) {
    const T* yr = y + r * D;
    const T* gr = gy + r * D;
    T* xr = gx + r * D;
    T dot = T(0);
    for (std::size_t i = 0; i < D; ++i) dot += yr[i] * gr[i];
    for (std::size_t i = 0; i < D; ++i) xr[i] = yr[i] * (gr[i] - dot);
  });
}

template <typename T>
void layernorm_rows(const T* x, const T* gamma, const T* beta, T* y, T* mean, T* rstd,
                    std::size_t rows, std::size_t D, T eps) {
  detail::par_for(rows, [&](std::size_t r) {
    const T* xr = x + r * D;
    T* yr = y + r * D;
    T mu = T(0);
    for (std::size_t i = 0; i < D; ++i) mu += xr[i];
    mu /= T(D);
    T var = T(0);
    for (std::size_t i = 0; i < D; ++i) {
      const T d = xr[i] - mu;
      var += d * d;
    }
    var /= T(D);
    const T rs = T(1) / std::sqrt(var + eps);
    for (std::size_t i = 0; i < D; ++i) yr[i] = (xr[i] - mu) * rs * gamma[i] + beta[i];
    mean[r] = mu;
    rstd[r] = rs;
  });
}

template <typename T>
void layernorm_rows_grad(const T* x, const T* gamma, const T* mean, const T* rstd, const T* gy,
                         T* gx, T* dgamma, T* dbeta, std::size_t rows, std::size_t D) {
  detail::par_for(rows, [&](std::size_t r) {
    const T* xr = x + r * D;
    const T* gr = gy + r * D;
    T* xo = gx + r * D;
    const T mu = mean[r], rs = rstd[r];
    T sum_g = T(0), sum_gx = T(0);
    for (std::size_t i = 0; i < D; ++i) {
      const T gh = gr[i] * gamma[i];
      sum_g += gh;
      sum_gx += gh * (xr[i] - mu) * rs;
    }
    for (std::size_t i = 0; i < D; ++i) {
      const T gh = gr[i] * gamma[i];
      const T xhat = (xr[i] - mu) * rs;
      xo[i] = rs * (gh - sum_g / T(D) - xhat * sum_gx / T(D));
    }
  });
  // parameter grads: owner per column, serial over rows
  detail::par_for(D, [&](std::size_t i) {
    T dg = T(0), db = T(0);
    for (std::size_t r = 0; r < rows; ++r) {
      const T xhat = (x[r * D + i] - mean[r]) * rstd[r];
      dg += gy[r * D + i] * xhat;
      db += gy[r * D + i];
    }
    dgamma[i] = dg;
    dbeta[i] = db;
  });
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T, typename F>
void map_unary(const T* x, T* y, std::size_t n, F&& f) {
  detail::par_for(n, [&](std::size_t i) { y[i] = f(x[i]); });
}

template <typename T>
void gelu(const T* x, T* y, std::size_t n) {
  map_unary(x, y, n, [](T v) {
    return T(0.5) * v * (T(1) + std::erf(v / std::sqrt(T(2))));
  });
}

template <typename T>
void gelu_grad(const T* x, const T* gy, T* gx, std::size_t n) {
  constexpr double inv_sqrt2pi = 0.3989422804014327;
  detail::par_for(n, [&](std::size_t i) {
    const double v = static_cast<double>(x[i]);
    const double cdf = 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
    const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
    gx[i] = gy[i] * static_cast<T>(cdf + v * pdf);
  });
}

/// In-place fixed-order block-sum of squares; deterministic for any thread count.
template <typename T>
double sum_squares(const T* x, std::size_t n) {
  constexpr std::size_t block = 4096;
  const std::size_t nblocks = (n + block - 1) / block;
  std::vector<double> partial(nblocks, 0.0);
  detail::par_for(nblocks, [&](std::size_t b) {
    const std::size_t lo = b * block, hi = std::min(n, lo + block);
    double acc = 0.0;
    for (std::size_t i = lo; i < hi; ++i) acc += static_cast<double>(x[i]) * x[i];
    partial[b] = acc;
  });
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

/// Adam update; moments updated in place.
template <typename T>
void adam_step(T* w, T* m, T* v, const T* g, std::size_t n, T lr, T beta1, T beta2, T eps,
               T bias1, T bias2) {
  detail::par_for(n, [&](std::size_t i) {
    m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
    v[i] = beta2 * v[i] + (T(1) - beta2) * g[i] * g[i];
    const T mhat = m[i] / bias1;
    const T vhat = v[i] / bias2;
    w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  });
}

}  // namespace pf::kernels
