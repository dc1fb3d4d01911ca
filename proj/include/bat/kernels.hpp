#pragma once

#include <cstddef>

namespace bat::kernels {

// Geometry of a 2-D convolution: input (cin,h,w), weights (cout,cin,r,s),
// zero padding `pad` on all sides, square stride. Output is (cout,ho,wo).
struct ConvDims {
  int cin, h, w;
  int cout, r, s;
  int stride, pad;
  int ho, wo;
};

// One table per instruction-set variant. All pointers are non-null.
//
// gemm conventions (row-major, no aliasing between C and A/B):
//   gemm_nn: C(m,n) = A(m,k) * B(k,n)
//   gemm_nt: C(m,n) = A(m,k) * B^T   with B stored (n,k)
//   gemm_tn: C(m,n) = A^T   * B      with A stored (k,m), B (k,n)
// `acc` accumulates into C instead of overwriting it.
struct KernelTable {
  const char* name;

  void (*gemm_nn)(const double* A, const double* B, double* C, int m, int k, int n, bool acc);
  void (*gemm_nt)(const double* A, const double* B, double* C, int m, int k, int n, bool acc);
  void (*gemm_tn)(const double* A, const double* B, double* C, int m, int k, int n, bool acc);

  void (*add)(const double* a, const double* b, double* out, std::size_t n);
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);   // y += alpha*x
  void (*scale)(double alpha, const double* x, double* y, std::size_t n);  // y  = alpha*x
  void (*hadamard)(const double* a, const double* b, double* out, std::size_t n);

  double (*sum)(const double* x, std::size_t n);
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*max_value)(const double* x, std::size_t n);  // n >= 1

  void (*vexp)(const double* x, double* y, std::size_t n);
  void (*verf)(const double* x, double* y, std::size_t n);
  // y = 0.5*x*(1+erf(x/sqrt(2))); dy (nullable) receives the derivative.
  void (*gelu)(const double* x, double* y, double* dy, std::size_t n);
  void (*sigmoid)(const double* x, double* y, std::size_t n);
  void (*relu)(const double* x, double* y, std::size_t n);

  // bias may be null. Forward overwrites O; the backward kernels accumulate.
  void (*conv2d)(const double* X, const double* W, const double* bias, double* O, const ConvDims& d);
  void (*conv2d_dx)(const double* G, const double* W, double* dX, const ConvDims& d);
  void (*conv2d_dw)(const double* G, const double* X, double* dW, double* dbias, const ConvDims& d);
};

const KernelTable& scalar_table();

// Null when the binary was built without AVX2 support or the CPU lacks it.
const KernelTable* avx2_table();

// Active table. Defaults to the best available variant; the BAT_KERNELS
// environment variable ("scalar" | "avx2" | "auto") overrides at startup.
const KernelTable& active();
void set_active(const KernelTable& t);

inline int conv_out_dim(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

}  // namespace bat::kernels
