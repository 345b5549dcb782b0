#pragma once

#include <cstdint>

namespace imf {

// Dense matrix kernels. kern:: versions are OpenMP-parallel over output
// rows/columns; each output element belongs to exactly one thread and inner
// sums run in a fixed order, so results match ref:: bit-for-bit.
// All kernels accumulate into the output buffer.
namespace kern {
// c[m,n] += a[m,k] * b[k,n]
void matmul_acc(const double* a, const double* b, double* c, int64_t m,
                int64_t k, int64_t n);
// c[k,n] += a[m,k]^T * g[m,n]
void matmul_tn_acc(const double* a, const double* g, double* c, int64_t m,
                   int64_t k, int64_t n);
// c[m,k] += g[m,n] * b[k,n]^T
void matmul_nt_acc(const double* g, const double* b, double* c, int64_t m,
                   int64_t k, int64_t n);
}  // namespace kern

// Serial reference implementations, kept for testing and benchmarks.
namespace ref {
void matmul_acc(const double* a, const double* b, double* c, int64_t m,
                int64_t k, int64_t n);
void matmul_tn_acc(const double* a, const double* g, double* c, int64_t m,
                   int64_t k, int64_t n);
void matmul_nt_acc(const double* g, const double* b, double* c, int64_t m,
                   int64_t k, int64_t n);
}  // namespace ref

}  // namespace imf
