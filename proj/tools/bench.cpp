#include <omp.h>

#include <cmath>
#include <cstdio>
#include <functional>

#include "imf/image.hpp"
#include "imf/kdtree.hpp"
#include "imf/kernels.hpp"
#include "imf/registration.hpp"
#include "imf/rng.hpp"
#include "imf/sparse.hpp"

using namespace imf;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    double t0 = omp_get_wtime();
    fn();
    best = std::min(best, (omp_get_wtime() - t0) * 1000.0);
  }
  return best;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

void report(const char* name, double serial_ms, double parallel_ms,
            double diff) {
  std::printf("%-28s serial %9.3f ms   parallel %9.3f ms   speedup %5.2fx   max|diff| %g\n",
              name, serial_ms, parallel_ms, serial_ms / parallel_ms, diff);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc > 1) omp_set_num_threads(std::atoi(argv[1]));
  std::printf("threads: %d\n", omp_get_max_threads());
  Rng rng(1234);

  {  // dense matmul
    int64_t m = 192, k = 192, n = 192;
    Tensor a = Tensor::uniform({m, k}, rng, -1, 1);
    Tensor b = Tensor::uniform({k, n}, rng, -1, 1);
    Tensor cs({m, n}), cp({m, n});
    double ts = time_ms([&] {
      std::fill(cs.values.begin(), cs.values.end(), 0.0);
      ref::matmul_acc(a.values.data(), b.values.data(), cs.values.data(), m, k, n);
    }, 5);
    double tp = time_ms([&] {
      std::fill(cp.values.begin(), cp.values.end(), 0.0);
      kern::matmul_acc(a.values.data(), b.values.data(), cp.values.data(), m, k, n);
    }, 5);
    report("matmul 192^3", ts, tp, max_abs_diff(cs.values, cp.values));
  }

  {  // sparse convolution forward + kernel gradient
    std::vector<Coord> coords;
    Rng crng(77);
    for (int i = 0; i < 20000; ++i)
      coords.push_back({static_cast<int32_t>(crng.uniform_int(40)),
                        static_cast<int32_t>(crng.uniform_int(40)),
                        static_cast<int32_t>(crng.uniform_int(40))});
    std::sort(coords.begin(), coords.end());
    coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    int64_t mrows = static_cast<int64_t>(coords.size());
    std::vector<Coord> out_coords = downsample_coords(coords, 2);
    KernelMap map = build_kernel_map_geom(coords, out_coords, 3, 1, true);
    int64_t cin = 16, cout = 32;
    Tensor feats = Tensor::uniform({mrows, cin}, rng, -1, 1);
    Tensor kernel = Tensor::uniform({27, cin, cout}, rng, -1, 1);
    Tensor os({static_cast<int64_t>(out_coords.size()), cout}), op = os;
    double ts = time_ms([&] {
      std::fill(os.values.begin(), os.values.end(), 0.0);
      ref::sparse_apply_acc(map, feats.values.data(), kernel.values.data(),
                            os.values.data(), cin, cout);
    }, 3);
    double tp = time_ms([&] {
      std::fill(op.values.begin(), op.values.end(), 0.0);
      kern::sparse_apply_acc(map, feats.values.data(), kernel.values.data(),
                             op.values.data(), cin, cout);
    }, 3);
    report("sparse conv fwd 20k", ts, tp, max_abs_diff(os.values, op.values));

    Tensor gout = Tensor::uniform({static_cast<int64_t>(out_coords.size()), cout},
                                  rng, -1, 1);
    Tensor gk_s({27, cin, cout}), gk_p = gk_s;
    ts = time_ms([&] {
      std::fill(gk_s.values.begin(), gk_s.values.end(), 0.0);
      ref::sparse_kernel_grad_acc(map, feats.values.data(), gout.values.data(),
                                  gk_s.values.data(), cin, cout);
    }, 3);
    tp = time_ms([&] {
      std::fill(gk_p.values.begin(), gk_p.values.end(), 0.0);
      kern::sparse_kernel_grad_acc(map, feats.values.data(), gout.values.data(),
                                   gk_p.values.data(), cin, cout);
    }, 3);
    report("sparse conv kgrad 20k", ts, tp, max_abs_diff(gk_s.values, gk_p.values));
  }

  {  // conv2d
    Tensor img = Tensor::uniform({240, 320, 3}, rng, 0, 1);
    Tensor k = Tensor::uniform({3, 3, 3, 16}, rng, -1, 1);
    Tensor os({120, 160, 16}), op = os;
    double ts = time_ms([&] {
      std::fill(os.values.begin(), os.values.end(), 0.0);
      ref::conv2d_forward(img.values.data(), 240, 320, 3, k.values.data(), 3, 3,
                          16, 2, nullptr, os.values.data(), 120, 160);
    }, 3);
    double tp = time_ms([&] {
      std::fill(op.values.begin(), op.values.end(), 0.0);
      kern::conv2d_forward(img.values.data(), 240, 320, 3, k.values.data(), 3,
                           3, 16, 2, nullptr, op.values.data(), 120, 160);
    }, 3);
    report("conv2d 320x240 s2", ts, tp, max_abs_diff(os.values, op.values));
  }

  {  // nearest-neighbor search: kd-tree (parallel queries) vs brute force
    int64_t n = 20000, q = 2000, dim = 32;
    Tensor base = Tensor::uniform({n, dim}, rng, -1, 1);
    Tensor queries = Tensor::uniform({q, dim}, rng, -1, 1);
    KdTree tree(base.values.data(), n, dim);
    std::vector<int64_t> res_kd(q), res_bf(q);
    double ts = time_ms([&] {
      for (int64_t i = 0; i < q; ++i) {
        const double* qp = queries.values.data() + i * dim;
        double best = 1e300;
        int64_t bi = -1;
        for (int64_t j = 0; j < n; ++j) {
          const double* bp = base.values.data() + j * dim;
          double d = 0;
          for (int64_t c = 0; c < dim; ++c) {
            double x = qp[c] - bp[c];
            d += x * x;
          }
          if (d < best) {
            best = d;
            bi = j;
          }
        }
        res_bf[i] = bi;
      }
    }, 2);
    double tp = time_ms([&] {
#pragma omp parallel for schedule(static)
      for (int64_t i = 0; i < q; ++i)
        res_kd[i] = tree.nearest(queries.values.data() + i * dim).index;
    }, 2);
    int64_t mismatches = 0;
    for (int64_t i = 0; i < q; ++i)
      if (res_kd[i] != res_bf[i]) ++mismatches;
    report("NN 2k queries vs 20k", ts, tp, static_cast<double>(mismatches));
  }

  {  // RANSAC iterations
    Rng prng(9);
    int n = 500;
    std::vector<Vec3> src(n), dst(n);
    CorrespondenceSet corrs;
    for (int i = 0; i < n; ++i) {
      src[i] = {prng.uniform(-1, 1), prng.uniform(-1, 1), prng.uniform(-1, 1)};
      dst[i] = {src[i][1], -src[i][0], src[i][2] + 0.3};
      if (i % 2 == 0) dst[i][0] += prng.uniform(-1, 1);  // half outliers
      corrs.pairs.push_back({i, i, 0.0, false});
    }
    RansacParams params;
    params.iterations = 4000;
    params.seed = 11;
    RansacResult r1, r2;
    double serial = time_ms([&] {
      omp_set_num_threads(1);
      r1 = ransac_register(corrs, src, dst, params);
    }, 2);
    omp_set_num_threads(argc > 1 ? std::atoi(argv[1]) : 0);
    if (argc <= 1) omp_set_num_threads(omp_get_num_procs());
    double parallel = time_ms([&] { r2 = ransac_register(corrs, src, dst, params); }, 2);
    double diff = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        diff = std::max(diff, std::fabs(r1.transform.r[i][j] - r2.transform.r[i][j]));
    report("ransac 4k iterations", serial, parallel, diff);
  }

  return 0;
}
