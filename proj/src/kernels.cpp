#include "imf/kernels.hpp"

namespace imf {

namespace kern {

void matmul_acc(const double* a, const double* b, double* c, int64_t m,
                int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (int64_t p = 0; p < k; ++p) {
      double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void matmul_tn_acc(const double* a, const double* g, double* c, int64_t m,
                   int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < k; ++p) {
    double* cp = c + p * n;
    for (int64_t i = 0; i < m; ++i) {
      double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* gi = g + i * n;
      for (int64_t j = 0; j < n; ++j) cp[j] += av * gi[j];
    }
  }
}

void matmul_nt_acc(const double* g, const double* b, double* c, int64_t m,
                   int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    double* ci = c + i * k;
    const double* gi = g + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double s = 0.0;
      for (int64_t j = 0; j < n; ++j) s += gi[j] * bp[j];
      ci[p] += s;
    }
  }
}

}  // namespace kern

namespace ref {

void matmul_acc(const double* a, const double* b, double* c, int64_t m,
                int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (int64_t p = 0; p < k; ++p) {
      double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void matmul_tn_acc(const double* a, const double* g, double* c, int64_t m,
                   int64_t k, int64_t n) {
  for (int64_t p = 0; p < k; ++p) {
    double* cp = c + p * n;
    for (int64_t i = 0; i < m; ++i) {
      double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* gi = g + i * n;
      for (int64_t j = 0; j < n; ++j) cp[j] += av * gi[j];
    }
  }
}

void matmul_nt_acc(const double* g, const double* b, double* c, int64_t m,
                   int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    double* ci = c + i * k;
    const double* gi = g + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double s = 0.0;
      for (int64_t j = 0; j < n; ++j) s += gi[j] * bp[j];
      ci[p] += s;
    }
  }
}

}  // namespace ref

}  // namespace imf
