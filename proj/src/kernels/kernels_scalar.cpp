// Reference kernels. Plain loops, no intrinsics; the AVX2 variants are tested
// for equivalence against these.

#include "bat/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace bat::kernels {
namespace {

void s_gemm_nn(const double* A, const double* B, double* C, int m, int k, int n, bool acc) {
  for (int i = 0; i < m; ++i) {
    double* c = C + std::size_t(i) * n;
    if (!acc) std::fill(c, c + n, 0.0);
    const double* a = A + std::size_t(i) * k;
    for (int p = 0; p < k; ++p) {
      const double av = a[p];
      const double* b = B + std::size_t(p) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

void s_gemm_nt(const double* A, const double* B, double* C, int m, int k, int n, bool acc) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + std::size_t(i) * k;
    double* c = C + std::size_t(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* b = B + std::size_t(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += a[p] * b[p];
      c[j] = acc ? c[j] + s : s;
    }
  }
}

void s_gemm_tn(const double* A, const double* B, double* C, int m, int k, int n, bool acc) {
  // A stored (k,m), B (k,n), C (m,n)
  if (!acc) std::fill(C, C + std::size_t(m) * n, 0.0);
  for (int p = 0; p < k; ++p) {
    const double* a = A + std::size_t(p) * m;
    const double* b = B + std::size_t(p) * n;
    for (int i = 0; i < m; ++i) {
      const double av = a[i];
      double* c = C + std::size_t(i) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

void s_add(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void s_axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void s_scale(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = alpha * x[i];
}

void s_hadamard(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

double s_sum(const double* x, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i];
  return s;
}

double s_dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double s_max(const double* x, std::size_t n) {
  double m = x[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max(m, x[i]);
  return m;
}

void s_vexp(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::exp(x[i]);
}

void s_verf(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::erf(x[i]);
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void s_gelu(const double* x, double* y, double* dy, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x[i];
    const double phi = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
    y[i] = v * phi;
    if (dy) dy[i] = phi + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
  }
}

void s_sigmoid(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
}

void s_relu(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void s_conv2d(const double* X, const double* W, const double* bias, double* O, const ConvDims& d) {
  for (int f = 0; f < d.cout; ++f) {
    const double b = bias ? bias[f] : 0.0;
    for (int oy = 0; oy < d.ho; ++oy) {
      for (int ox = 0; ox < d.wo; ++ox) {
        double s = b;
        for (int c = 0; c < d.cin; ++c) {
          const double* xc = X + (std::size_t(c) * d.h) * d.w;
          const double* wf = W + ((std::size_t(f) * d.cin + c) * d.r) * d.s;
          for (int ky = 0; ky < d.r; ++ky) {
            const int iy = oy * d.stride + ky - d.pad;
            if (iy < 0 || iy >= d.h) continue;
            for (int kx = 0; kx < d.s; ++kx) {
              const int ix = ox * d.stride + kx - d.pad;
              if (ix < 0 || ix >= d.w) continue;
              s += xc[std::size_t(iy) * d.w + ix] * wf[std::size_t(ky) * d.s + kx];
            }
          }
        }
        O[(std::size_t(f) * d.ho + oy) * d.wo + ox] = s;
      }
    }
  }
}

void s_conv2d_dx(const double* G, const double* W, double* dX, const ConvDims& d) {
  for (int f = 0; f < d.cout; ++f) {
    for (int oy = 0; oy < d.ho; ++oy) {
      for (int ox = 0; ox < d.wo; ++ox) {
        const double g = G[(std::size_t(f) * d.ho + oy) * d.wo + ox];
        if (g == 0.0) continue;
        for (int c = 0; c < d.cin; ++c) {
          double* xc = dX + (std::size_t(c) * d.h) * d.w;
          const double* wf = W + ((std::size_t(f) * d.cin + c) * d.r) * d.s;
          for (int ky = 0; ky < d.r; ++ky) {
            const int iy = oy * d.stride + ky - d.pad;
            if (iy < 0 || iy >= d.h) continue;
            for (int kx = 0; kx < d.s; ++kx) {
              const int ix = ox * d.stride + kx - d.pad;
              if (ix < 0 || ix >= d.w) continue;
              xc[std::size_t(iy) * d.w + ix] += g * wf[std::size_t(ky) * d.s + kx];
            }
          }
        }
      }
    }
  }
}

void s_conv2d_dw(const double* G, const double* X, double* dW, double* dbias, const ConvDims& d) {
  for (int f = 0; f < d.cout; ++f) {
    double bsum = 0.0;
    for (int oy = 0; oy < d.ho; ++oy) {
      for (int ox = 0; ox < d.wo; ++ox) {
        const double g = G[(std::size_t(f) * d.ho + oy) * d.wo + ox];
        bsum += g;
        if (g == 0.0) continue;
        for (int c = 0; c < d.cin; ++c) {
          const double* xc = X + (std::size_t(c) * d.h) * d.w;
          double* wf = dW + ((std::size_t(f) * d.cin + c) * d.r) * d.s;
          for (int ky = 0; ky < d.r; ++ky) {
            const int iy = oy * d.stride + ky - d.pad;
            if (iy < 0 || iy >= d.h) continue;
            for (int kx = 0; kx < d.s; ++kx) {
              const int ix = ox * d.stride + kx - d.pad;
              if (ix < 0 || ix >= d.w) continue;
              wf[std::size_t(ky) * d.s + kx] += g * xc[std::size_t(iy) * d.w + ix];
            }
          }
        }
      }
    }
    if (dbias) dbias[f] += bsum;
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable t = {
      "scalar",
      s_gemm_nn, s_gemm_nt, s_gemm_tn,
      s_add, s_axpy, s_scale, s_hadamard,
      s_sum, s_dot, s_max,
      s_vexp, s_verf, s_gelu, s_sigmoid, s_relu,
      s_conv2d, s_conv2d_dx, s_conv2d_dw,
  };
  return t;
}

}  // namespace bat::kernels
