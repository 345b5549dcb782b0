#pragma once

#include <omp.h>

#include <cstdlib>

namespace imf {

// Thread-count control for the OpenMP kernels. All parallel loops in this
// project assign each output element to exactly one thread with a fixed
// inner summation order, so results are bit-identical for any thread count.
inline void set_threads(int n) {
  if (n > 0) omp_set_num_threads(n);
}

inline int threads_from_env() {
  const char* v = std::getenv("IMFNET_THREADS");
  if (!v) return 0;
  int n = std::atoi(v);
  return n > 0 ? n : 0;
}

}  // namespace imf
