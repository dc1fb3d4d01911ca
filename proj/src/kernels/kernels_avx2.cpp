// AVX2+FMA kernel variants. Compiled only on x86-64 toolchains that accept
// -mavx2 -mfma; picked at runtime when the CPU supports both (see kernels.cpp).
//
// Reductions (sum, dot, gemm) use a different accumulation order than the
// scalar reference, and FMA contracts multiply-add, so results agree with the
// scalar table to rounding error, not bit-for-bit. The equivalence tests pin
// that down. vexp/verf are own implementations (documented in-line) accurate
// to a few ulp against libm; vexp clamps its argument to [-700, 700].

#include "bat/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

namespace bat::kernels {
namespace {

// ---------------------------------------------------------------- gemm

void a_gemm_nn(const double* A, const double* B, double* C, int m, int k, int n, bool acc) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + std::size_t(i) * k;
    double* c = C + std::size_t(i) * n;
    int j = 0;
    for (; j + 16 <= n; j += 16) {
      __m256d c0, c1, c2, c3;
      if (acc) {
        c0 = _mm256_loadu_pd(c + j);
        c1 = _mm256_loadu_pd(c + j + 4);
        c2 = _mm256_loadu_pd(c + j + 8);
        c3 = _mm256_loadu_pd(c + j + 12);
      } else {
        c0 = c1 = c2 = c3 = _mm256_setzero_pd();
      }
      for (int p = 0; p < k; ++p) {
        const __m256d av = _mm256_set1_pd(a[p]);
        const double* b = B + std::size_t(p) * n + j;
        c0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b), c0);
        c1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + 4), c1);
        c2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + 8), c2);
        c3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + 12), c3);
      }
      _mm256_storeu_pd(c + j, c0);
      _mm256_storeu_pd(c + j + 4, c1);
      _mm256_storeu_pd(c + j + 8, c2);
      _mm256_storeu_pd(c + j + 12, c3);
    }
    for (; j + 4 <= n; j += 4) {
      __m256d c0 = acc ? _mm256_loadu_pd(c + j) : _mm256_setzero_pd();
      for (int p = 0; p < k; ++p) {
        const __m256d av = _mm256_set1_pd(a[p]);
        c0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(B + std::size_t(p) * n + j), c0);
      }
      _mm256_storeu_pd(c + j, c0);
    }
    for (; j < n; ++j) {
      double s = acc ? c[j] : 0.0;
      for (int p = 0; p < k; ++p) s += a[p] * B[std::size_t(p) * n + j];
      c[j] = s;
    }
  }
}

void a_gemm_nt(const double* A, const double* B, double* C, int m, int k, int n, bool acc) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + std::size_t(i) * k;
    double* c = C + std::size_t(i) * n;
    int j = 0;
    for (; j + 4 <= n; j += 4) {
      const double* b0 = B + std::size_t(j) * k;
      const double* b1 = b0 + k;
      const double* b2 = b1 + k;
      const double* b3 = b2 + k;
      __m256d s0 = _mm256_setzero_pd(), s1 = s0, s2 = s0, s3 = s0;
      int p = 0;
      for (; p + 4 <= k; p += 4) {
        const __m256d av = _mm256_loadu_pd(a + p);
        s0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b0 + p), s0);
        s1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b1 + p), s1);
        s2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b2 + p), s2);
        s3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b3 + p), s3);
      }
      // transpose-reduce the four accumulators into [sum(s0)..sum(s3)]
      const __m256d t01 = _mm256_hadd_pd(s0, s1);
      const __m256d t23 = _mm256_hadd_pd(s2, s3);
      const __m256d lo = _mm256_permute2f128_pd(t01, t23, 0x20);
      const __m256d hi = _mm256_permute2f128_pd(t01, t23, 0x31);
      double tmp[4];
      _mm256_storeu_pd(tmp, _mm256_add_pd(lo, hi));
      for (; p < k; ++p) {
        tmp[0] += a[p] * b0[p];
        tmp[1] += a[p] * b1[p];
        tmp[2] += a[p] * b2[p];
        tmp[3] += a[p] * b3[p];
      }
      for (int t = 0; t < 4; ++t) c[j + t] = acc ? c[j + t] + tmp[t] : tmp[t];
    }
    for (; j < n; ++j) {
      const double* b = B + std::size_t(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += a[p] * b[p];
      c[j] = acc ? c[j] + s : s;
    }
  }
}

void a_gemm_tn(const double* A, const double* B, double* C, int m, int k, int n, bool acc) {
  if (!acc) std::fill(C, C + std::size_t(m) * n, 0.0);
  for (int p = 0; p < k; ++p) {
    const double* a = A + std::size_t(p) * m;
    const double* b = B + std::size_t(p) * n;
    for (int i = 0; i < m; ++i) {
      const __m256d av = _mm256_set1_pd(a[i]);
      double* c = C + std::size_t(i) * n;
      int j = 0;
      for (; j + 4 <= n; j += 4) {
        _mm256_storeu_pd(c + j, _mm256_fmadd_pd(av, _mm256_loadu_pd(b + j), _mm256_loadu_pd(c + j)));
      }
      for (; j < n; ++j) c[j] += a[i] * b[j];
    }
  }
}

// ---------------------------------------------------------------- elementwise

void a_add(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void a_axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void a_scale(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) y[i] = alpha * x[i];
}

void a_hadamard(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

double reduce_add(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double a_sum(const double* x, std::size_t n) {
  __m256d s0 = _mm256_setzero_pd(), s1 = s0;
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 = _mm256_add_pd(s0, _mm256_loadu_pd(x + i));
    s1 = _mm256_add_pd(s1, _mm256_loadu_pd(x + i + 4));
  }
  for (; i + 4 <= n; i += 4) s0 = _mm256_add_pd(s0, _mm256_loadu_pd(x + i));
  double s = reduce_add(_mm256_add_pd(s0, s1));
  for (; i < n; ++i) s += x[i];
  return s;
}

double a_dot(const double* a, const double* b, std::size_t n) {
  __m256d s0 = _mm256_setzero_pd(), s1 = s0;
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), s1);
  }
  for (; i + 4 <= n; i += 4) s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
  double s = reduce_add(_mm256_add_pd(s0, s1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

double a_max(const double* x, std::size_t n) {
  std::size_t i = 0;
  double m = x[0];
  if (n >= 4) {
    __m256d mv = _mm256_loadu_pd(x);
    i = 4;
    for (; i + 4 <= n; i += 4) mv = _mm256_max_pd(mv, _mm256_loadu_pd(x + i));
    const __m128d lo = _mm256_castpd256_pd128(mv);
    const __m128d hi = _mm256_extractf128_pd(mv, 1);
    const __m128d mx = _mm_max_pd(lo, hi);
    m = _mm_cvtsd_f64(_mm_max_sd(mx, _mm_unpackhi_pd(mx, mx)));
  }
  for (; i < n; ++i) m = std::max(m, x[i]);
  return m;
}

// ---------------------------------------------------------------- exp / erf

// exp via Cody-Waite range reduction (fdlibm ln2 split) and a degree-13
// Taylor polynomial on |r| <= ln2/2; the remainder there is ~4e-18.
// Valid on [-700, 700]; arguments outside are clamped (documented above).
const double kLn2Hi = 6.93147180369123816490e-01;
const double kLn2Lo = 1.90821492927058770002e-10;
const double kLog2E = 1.44269504088896340736;

struct InvFact {
  double c[14];
  InvFact() {
    double f = 1.0;
    c[0] = 1.0;
    for (int i = 1; i < 14; ++i) {
      f *= double(i);
      c[i] = 1.0 / f;
    }
  }
};
const InvFact kInvFact;

__m256d exp_pd(__m256d x) {
  x = _mm256_min_pd(_mm256_max_pd(x, _mm256_set1_pd(-700.0)), _mm256_set1_pd(700.0));
  const __m256d kf = _mm256_round_pd(_mm256_mul_pd(x, _mm256_set1_pd(kLog2E)),
                                     _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(kf, _mm256_set1_pd(kLn2Hi), x);
  r = _mm256_fnmadd_pd(kf, _mm256_set1_pd(kLn2Lo), r);

  __m256d p = _mm256_set1_pd(kInvFact.c[13]);
  for (int i = 12; i >= 0; --i) p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(kInvFact.c[i]));

  const __m128i ki = _mm256_cvtpd_epi32(kf);
  const __m256i k64 = _mm256_cvtepi32_epi64(ki);
  const __m256i bits = _mm256_slli_epi64(_mm256_add_epi64(k64, _mm256_set1_epi64x(1023)), 52);
  return _mm256_mul_pd(p, _mm256_castsi256_pd(bits));
}

// erf on |t| <= 3 via the cancellation-free series
//   erf(t) = (2/sqrt(pi)) * t * exp(-t^2) * sum_n (2 t^2)^n / (2n+1)!!
// (52 fixed terms; tail < 1e-16 relative at t = 3). Lanes with |t| > 3 fall
// back to libm erf; with the activations seen here that is the rare path.
constexpr int kErfTerms = 52;

struct ErfCoef {
  double c[kErfTerms + 1];
  ErfCoef() {
    c[0] = 1.0;
    for (int i = 1; i <= kErfTerms; ++i) c[i] = c[i - 1] / double(2 * i + 1);
  }
};
const ErfCoef kErfCoef;
const double kTwoOverSqrtPi = 1.12837916709551257390;

__m256d erf_small_pd(__m256d t) {
  const __m256d t2 = _mm256_mul_pd(t, t);
  const __m256d u = _mm256_add_pd(t2, t2);
  __m256d s = _mm256_set1_pd(kErfCoef.c[kErfTerms]);
  for (int i = kErfTerms - 1; i >= 0; --i) s = _mm256_fmadd_pd(s, u, _mm256_set1_pd(kErfCoef.c[i]));
  const __m256d e = exp_pd(_mm256_sub_pd(_mm256_setzero_pd(), t2));
  return _mm256_mul_pd(_mm256_mul_pd(_mm256_set1_pd(kTwoOverSqrtPi), t), _mm256_mul_pd(e, s));
}

__m256d erf_pd(__m256d t) {
  const __m256d abs_t = _mm256_andnot_pd(_mm256_set1_pd(-0.0), t);
  const __m256d big = _mm256_cmp_pd(abs_t, _mm256_set1_pd(3.0), _CMP_GT_OQ);
  __m256d r = erf_small_pd(t);
  const int mask = _mm256_movemask_pd(big);
  if (mask) {
    alignas(32) double tv[4], rv[4];
    _mm256_store_pd(tv, t);
    _mm256_store_pd(rv, r);
    for (int l = 0; l < 4; ++l)
      if (mask & (1 << l)) rv[l] = std::erf(tv[l]);
    r = _mm256_load_pd(rv);
  }
  return r;
}

void a_vexp(const double* x, double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, exp_pd(_mm256_loadu_pd(x + i)));
  if (i < n) {
    alignas(32) double tail[4] = {0, 0, 0, 0};
    std::memcpy(tail, x + i, (n - i) * sizeof(double));
    _mm256_store_pd(tail, exp_pd(_mm256_load_pd(tail)));
    std::memcpy(y + i, tail, (n - i) * sizeof(double));
  }
}

void a_verf(const double* x, double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, erf_pd(_mm256_loadu_pd(x + i)));
  for (; i < n; ++i) y[i] = std::erf(x[i]);
}

const double kInvSqrt2 = 0.70710678118654752440;
const double kInvSqrt2Pi = 0.39894228040143267794;

void a_gelu(const double* x, double* y, double* dy, std::size_t n) {
  const __m256d half = _mm256_set1_pd(0.5);
  const __m256d one = _mm256_set1_pd(1.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    const __m256d t = _mm256_mul_pd(v, _mm256_set1_pd(kInvSqrt2));
    const __m256d phi = _mm256_mul_pd(half, _mm256_add_pd(one, erf_pd(t)));
    _mm256_storeu_pd(y + i, _mm256_mul_pd(v, phi));
    if (dy) {
      const __m256d e = exp_pd(_mm256_mul_pd(_mm256_set1_pd(-0.5), _mm256_mul_pd(v, v)));
      const __m256d pdf = _mm256_mul_pd(_mm256_set1_pd(kInvSqrt2Pi), e);
      _mm256_storeu_pd(dy + i, _mm256_fmadd_pd(v, pdf, phi));
    }
  }
  for (; i < n; ++i) {
    const double v = x[i];
    const double phi = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
    y[i] = v * phi;
    if (dy) dy[i] = phi + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
  }
}

void a_sigmoid(const double* x, double* y, std::size_t n) {
  const __m256d one = _mm256_set1_pd(1.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    const __m256d e = exp_pd(_mm256_sub_pd(_mm256_setzero_pd(), v));
    _mm256_storeu_pd(y + i, _mm256_div_pd(one, _mm256_add_pd(one, e)));
  }
  for (; i < n; ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
}

void a_relu(const double* x, double* y, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

// ---------------------------------------------------------------- conv2d

thread_local std::vector<double> g_conv_scratch;

double* padded_input(const double* X, const ConvDims& d, bool zero_only) {
  const int hp = d.h + 2 * d.pad, wp = d.w + 2 * d.pad;
  g_conv_scratch.assign(std::size_t(d.cin) * hp * wp, 0.0);
  double* P = g_conv_scratch.data();
  if (!zero_only) {
    for (int c = 0; c < d.cin; ++c)
      for (int yy = 0; yy < d.h; ++yy)
        std::memcpy(P + (std::size_t(c) * hp + yy + d.pad) * wp + d.pad,
                    X + (std::size_t(c) * d.h + yy) * d.w, std::size_t(d.w) * sizeof(double));
  }
  return P;
}

void a_conv2d(const double* X, const double* W, const double* bias, double* O, const ConvDims& d) {
  if (d.stride != 1 || d.wo < 4) {
    scalar_table().conv2d(X, W, bias, O, d);
    return;
  }
  const int hp = d.h + 2 * d.pad, wp = d.w + 2 * d.pad;
  const double* P = padded_input(X, d, false);
  for (int f = 0; f < d.cout; ++f) {
    const double b = bias ? bias[f] : 0.0;
    for (int oy = 0; oy < d.ho; ++oy) {
      double* orow = O + (std::size_t(f) * d.ho + oy) * d.wo;
      int ox = 0;
      for (; ox + 4 <= d.wo; ox += 4) {
        __m256d acc = _mm256_set1_pd(b);
        for (int c = 0; c < d.cin; ++c) {
          const double* wf = W + ((std::size_t(f) * d.cin + c) * d.r) * d.s;
          for (int ky = 0; ky < d.r; ++ky) {
            const double* prow = P + (std::size_t(c) * hp + oy + ky) * wp + ox;
            for (int kx = 0; kx < d.s; ++kx)
              acc = _mm256_fmadd_pd(_mm256_set1_pd(wf[ky * d.s + kx]), _mm256_loadu_pd(prow + kx), acc);
          }
        }
        _mm256_storeu_pd(orow + ox, acc);
      }
      for (; ox < d.wo; ++ox) {
        double s = b;
        for (int c = 0; c < d.cin; ++c) {
          const double* wf = W + ((std::size_t(f) * d.cin + c) * d.r) * d.s;
          for (int ky = 0; ky < d.r; ++ky) {
            const double* prow = P + (std::size_t(c) * hp + oy + ky) * wp + ox;
            for (int kx = 0; kx < d.s; ++kx) s += wf[ky * d.s + kx] * prow[kx];
          }
        }
        orow[ox] = s;
      }
    }
  }
}

void a_conv2d_dx(const double* G, const double* W, double* dX, const ConvDims& d) {
  if (d.stride != 1 || d.wo < 4) {
    scalar_table().conv2d_dx(G, W, dX, d);
    return;
  }
  const int hp = d.h + 2 * d.pad, wp = d.w + 2 * d.pad;
  double* dP = padded_input(nullptr, d, true);
  for (int f = 0; f < d.cout; ++f) {
    for (int oy = 0; oy < d.ho; ++oy) {
      const double* grow = G + (std::size_t(f) * d.ho + oy) * d.wo;
      int ox = 0;
      for (; ox + 4 <= d.wo; ox += 4) {
        const __m256d gv = _mm256_loadu_pd(grow + ox);
        for (int c = 0; c < d.cin; ++c) {
          const double* wf = W + ((std::size_t(f) * d.cin + c) * d.r) * d.s;
          for (int ky = 0; ky < d.r; ++ky) {
            double* prow = dP + (std::size_t(c) * hp + oy + ky) * wp + ox;
            for (int kx = 0; kx < d.s; ++kx) {
              const __m256d cur = _mm256_loadu_pd(prow + kx);
              _mm256_storeu_pd(prow + kx, _mm256_fmadd_pd(_mm256_set1_pd(wf[ky * d.s + kx]), gv, cur));
            }
          }
        }
      }
      for (; ox < d.wo; ++ox) {
        const double g = grow[ox];
        for (int c = 0; c < d.cin; ++c) {
          const double* wf = W + ((std::size_t(f) * d.cin + c) * d.r) * d.s;
          for (int ky = 0; ky < d.r; ++ky) {
            double* prow = dP + (std::size_t(c) * hp + oy + ky) * wp + ox;
            for (int kx = 0; kx < d.s; ++kx) prow[kx] += g * wf[ky * d.s + kx];
          }
        }
      }
    }
  }
  for (int c = 0; c < d.cin; ++c)
    for (int yy = 0; yy < d.h; ++yy) {
      const double* src = dP + (std::size_t(c) * hp + yy + d.pad) * wp + d.pad;
      double* dst = dX + (std::size_t(c) * d.h + yy) * d.w;
      a_axpy(1.0, src, dst, std::size_t(d.w));
    }
}

void a_conv2d_dw(const double* G, const double* X, double* dW, double* dbias, const ConvDims& d) {
  if (d.stride != 1 || d.wo < 4) {
    scalar_table().conv2d_dw(G, X, dW, dbias, d);
    return;
  }
  const int hp = d.h + 2 * d.pad, wp = d.w + 2 * d.pad;
  const double* P = padded_input(X, d, false);
  for (int f = 0; f < d.cout; ++f) {
    const double* gf = G + (std::size_t(f) * d.ho) * d.wo;
    if (dbias) dbias[f] += a_sum(gf, std::size_t(d.ho) * d.wo);
    for (int c = 0; c < d.cin; ++c) {
      double* wf = dW + ((std::size_t(f) * d.cin + c) * d.r) * d.s;
      for (int ky = 0; ky < d.r; ++ky) {
        for (int kx = 0; kx < d.s; ++kx) {
          __m256d acc = _mm256_setzero_pd();
          double tail = 0.0;
          for (int oy = 0; oy < d.ho; ++oy) {
            const double* grow = gf + std::size_t(oy) * d.wo;
            const double* prow = P + (std::size_t(c) * hp + oy + ky) * wp + kx;
            int ox = 0;
            for (; ox + 4 <= d.wo; ox += 4)
              acc = _mm256_fmadd_pd(_mm256_loadu_pd(grow + ox), _mm256_loadu_pd(prow + ox), acc);
            for (; ox < d.wo; ++ox) tail += grow[ox] * prow[ox];
          }
          wf[ky * d.s + kx] += reduce_add(acc) + tail;
        }
      }
    }
  }
}

}  // namespace

const KernelTable* avx2_table_impl() {
  static const KernelTable t = {
      "avx2",
      a_gemm_nn, a_gemm_nt, a_gemm_tn,
      a_add, a_axpy, a_scale, a_hadamard,
      a_sum, a_dot, a_max,
      a_vexp, a_verf, a_gelu, a_sigmoid, a_relu,
      a_conv2d, a_conv2d_dx, a_conv2d_dw,
  };
  return &t;
}

}  // namespace bat::kernels

#endif
