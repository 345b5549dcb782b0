#include "imf/sparse.hpp"

#include <algorithm>
#include <cmath>

namespace imf {

uint64_t CoordMap::hash(const Coord& c) {
  uint64_t h = (static_cast<uint64_t>(static_cast<uint32_t>(c[0])) << 42) ^
               (static_cast<uint64_t>(static_cast<uint32_t>(c[1])) << 21) ^
               static_cast<uint64_t>(static_cast<uint32_t>(c[2]));
  return mix_seed(h);
}

void CoordMap::grow(int64_t min_cap) {
  int64_t cap = 16;
  while (cap < min_cap) cap <<= 1;
  std::vector<Coord> old_keys = std::move(keys_);
  std::vector<int32_t> old_rows = std::move(rows_);
  keys_.assign(cap, Coord{});
  rows_.assign(cap, -1);
  mask_ = static_cast<uint64_t>(cap - 1);
  size_ = 0;
  for (size_t i = 0; i < old_rows.size(); ++i)
    if (old_rows[i] >= 0) insert(old_keys[i], old_rows[i]);
}

int32_t CoordMap::find(const Coord& c) const {
  uint64_t i = hash(c) & mask_;
  while (rows_[i] >= 0) {
    if (keys_[i] == c) return rows_[i];
    i = (i + 1) & mask_;
  }
  return -1;
}

int32_t CoordMap::insert(const Coord& c, int32_t row) {
  if (size_ * 2 >= static_cast<int64_t>(mask_ + 1)) grow((mask_ + 1) * 2);
  uint64_t i = hash(c) & mask_;
  while (rows_[i] >= 0) {
    if (keys_[i] == c) return rows_[i];
    i = (i + 1) & mask_;
  }
  keys_[i] = c;
  rows_[i] = row;
  ++size_;
  return row;
}

int64_t KernelMap::total_pairs() const {
  int64_t n = 0;
  for (const auto& p : pairs) n += static_cast<int64_t>(p.size());
  return n;
}

void KernelMap::build_csr() {
  by_out.assign(out_rows, {});
  by_in.assign(in_rows, {});
  for (int s = 0; s < static_cast<int>(pairs.size()); ++s)
    for (const auto& [i, j] : pairs[s]) {
      by_out[j].emplace_back(s, i);
      by_in[i].emplace_back(s, j);
    }
}

Coord offset_delta(int s, int extent) {
  int h = extent / 2;
  int e2 = extent * extent;
  return Coord{static_cast<int32_t>(s / e2 - h),
               static_cast<int32_t>((s / extent) % extent - h),
               static_cast<int32_t>(s % extent - h)};
}

SparseConvLayer SparseConvLayer::create(const std::string& name, int64_t c_in,
                                        int64_t c_out, int extent, int stride,
                                        bool transpose, Rng& rng) {
  require(extent >= 1 && extent % 2 == 1, ErrorCategory::config,
          "kernel extent must be odd, got ", extent);
  require(stride == 1 || stride == 2, ErrorCategory::config,
          "conv stride must be 1 or 2, got ", stride);
  int64_t s3 = static_cast<int64_t>(extent) * extent * extent;
  double bound = 1.0 / std::sqrt(static_cast<double>(s3 * c_in));
  SparseConvLayer layer;
  layer.kernel = Parameter(
      name, Tensor::uniform({s3, c_in, c_out}, rng, -bound, bound));
  layer.stride = stride;
  layer.kernel_extent = extent;
  layer.transpose = transpose;
  return layer;
}

Coord quantize(const std::array<double, 3>& p, double voxel_size) {
  return Coord{static_cast<int32_t>(std::floor(p[0] / voxel_size)),
               static_cast<int32_t>(std::floor(p[1] / voxel_size)),
               static_cast<int32_t>(std::floor(p[2] / voxel_size))};
}

namespace {
int32_t floor_to_multiple(int32_t c, int32_t f) {
  int32_t q = c / f;
  if (c % f != 0 && c < 0) --q;
  return q * f;
}
}  // namespace

std::vector<Coord> downsample_coords(const std::vector<Coord>& coords,
                                     int32_t factor) {
  CoordMap seen(static_cast<int64_t>(coords.size()));
  std::vector<Coord> out;
  out.reserve(coords.size());
  for (const Coord& c : coords) {
    Coord d{floor_to_multiple(c[0], factor), floor_to_multiple(c[1], factor),
            floor_to_multiple(c[2], factor)};
    if (seen.insert(d, static_cast<int32_t>(out.size())) ==
        static_cast<int32_t>(out.size()))
      out.push_back(d);
  }
  std::sort(out.begin(), out.end());
  return out;
}

SparseTensor voxelize(Tape& tape, const std::vector<std::array<double, 3>>& points,
                      const Tensor* attributes, double voxel_size) {
  require(!points.empty(), ErrorCategory::contract,
          "voxelize: empty input point cloud");
  require(voxel_size > 0.0, ErrorCategory::contract,
          "voxelize: voxel_size must be > 0");
  int64_t n = static_cast<int64_t>(points.size());
  int64_t a = 1;
  if (attributes) {
    require(attributes->ndim() == 2 && attributes->shape[0] == n,
            ErrorCategory::dimension, "attributes shape ",
            attributes->shape_str(), " does not match ", n, " points");
    a = attributes->shape[1];
  }

  std::vector<Coord> cells(n);
  for (int64_t i = 0; i < n; ++i) cells[i] = quantize(points[i], voxel_size);

  // Sorted unique coordinate list.
  std::vector<Coord> coords = cells;
  std::sort(coords.begin(), coords.end());
  coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
  int64_t m = static_cast<int64_t>(coords.size());
  CoordMap lut(m);
  for (int64_t r = 0; r < m; ++r)
    lut.insert(coords[r], static_cast<int32_t>(r));

  std::vector<std::vector<int32_t>> origin(m);
  for (int64_t i = 0; i < n; ++i)
    origin[lut.find(cells[i])].push_back(static_cast<int32_t>(i));

  // Accumulate per voxel in point-value order so the result is independent
  // of the input permutation.
  Tensor feats({m, a});
  std::vector<std::array<double, 3>> centroids(m);
  std::vector<int32_t> members;
  for (int64_t r = 0; r < m; ++r) {
    members = origin[r];
    std::sort(members.begin(), members.end(), [&](int32_t p, int32_t q) {
      if (points[p] != points[q]) return points[p] < points[q];
      if (attributes)
        for (int64_t c = 0; c < a; ++c) {
          double vp = attributes->at(p, c), vq = attributes->at(q, c);
          if (vp != vq) return vp < vq;
        }
      return false;
    });
    std::array<double, 3> csum{0, 0, 0};
    std::vector<double> fsum(a, 0.0);
    for (int32_t p : members) {
      for (int k = 0; k < 3; ++k) csum[k] += points[p][k];
      if (attributes)
        for (int64_t c = 0; c < a; ++c) fsum[c] += attributes->at(p, c);
      else
        fsum[0] += 1.0;
    }
    double inv = 1.0 / static_cast<double>(members.size());
    for (int k = 0; k < 3; ++k) centroids[r][k] = csum[k] * inv;
    for (int64_t c = 0; c < a; ++c)
      feats.at(r, c) = attributes ? fsum[c] * inv : 1.0;
  }

  SparseTensor st;
  st.coords = std::move(coords);
  st.feats = tape.leaf(std::move(feats));
  st.stride = 1;
  st.voxel_size = voxel_size;
  st.origin_map = std::move(origin);
  st.centroids = std::move(centroids);
  return st;
}

KernelMap build_kernel_map_geom(const std::vector<Coord>& fine,
                                const std::vector<Coord>& coarse, int extent,
                                int32_t step, bool fine_is_input) {
  KernelMap map;
  map.extent = extent;
  int s3 = extent * extent * extent;
  map.pairs.assign(s3, {});
  map.in_rows = static_cast<int64_t>(fine_is_input ? fine.size() : coarse.size());
  map.out_rows = static_cast<int64_t>(fine_is_input ? coarse.size() : fine.size());

  CoordMap lut(static_cast<int64_t>(fine.size()));
  for (size_t r = 0; r < fine.size(); ++r)
    lut.insert(fine[r], static_cast<int32_t>(r));

  for (int s = 0; s < s3; ++s) {
    Coord d = offset_delta(s, extent);
    auto& bucket = map.pairs[s];
    for (int32_t j = 0; j < static_cast<int32_t>(coarse.size()); ++j) {
      Coord probe{coarse[j][0] + d[0] * step, coarse[j][1] + d[1] * step,
                  coarse[j][2] + d[2] * step};
      int32_t i = lut.find(probe);
      if (i < 0) continue;
      if (fine_is_input)
        bucket.emplace_back(i, j);
      else
        bucket.emplace_back(j, i);
    }
  }
  map.build_csr();
  return map;
}

KernelMap build_kernel_map(const SparseTensor& inp,
                           const std::vector<Coord>& out_coords,
                           const SparseConvLayer& layer) {
  if (!layer.transpose)
    return build_kernel_map_geom(inp.coords, out_coords, layer.kernel_extent,
                                 inp.stride, true);
  int32_t out_stride = layer.stride == 2 ? inp.stride / 2 : inp.stride;
  return build_kernel_map_geom(out_coords, inp.coords, layer.kernel_extent,
                               out_stride, false);
}

namespace {

SparseTensor apply_on_tape(Tape& tape, const SparseTensor& inp,
                           SparseConvLayer& layer, std::vector<Coord> out_coords,
                           int32_t out_stride) {
  const Tensor& f = tape.value(inp.feats);
  require(f.cols() == layer.c_in(), ErrorCategory::dimension,
          "sparse conv channel mismatch: input has ", f.cols(),
          " channels, kernel expects ", layer.c_in());
  int64_t cin = layer.c_in(), cout = layer.c_out();
  auto map = std::make_shared<KernelMap>(
      build_kernel_map(inp, out_coords, layer));

  Tensor out({static_cast<int64_t>(out_coords.size()), cout});
  Var kv = tape.param(layer.kernel);
  kern::sparse_apply_acc(*map, f.values.data(),
                         tape.value(kv).values.data(), out.values.data(), cin,
                         cout);
  Var ov = tape.custom(
      std::move(out), {inp.feats, kv}, [map, cin, cout](Backprop& bp) {
        const auto& g = bp.out_grad();
        const Tensor& in = bp.in_value(0);
        const Tensor& k = bp.in_value(1);
        kern::sparse_feat_grad_acc(*map, g.data(), k.values.data(),
                                   bp.in_grad(0).data(), cin, cout);
        kern::sparse_kernel_grad_acc(*map, in.values.data(), g.data(),
                                     bp.in_grad(1).data(), cin, cout);
      });

  SparseTensor st;
  st.coords = std::move(out_coords);
  st.feats = ov;
  st.stride = out_stride;
  st.voxel_size = inp.voxel_size;
  return st;
}

}  // namespace

SparseTensor sparse_conv(Tape& tape, const SparseTensor& inp,
                         SparseConvLayer& layer) {
  require(!layer.transpose, ErrorCategory::contract,
          "sparse_conv called with a transpose layer");
  std::vector<Coord> out_coords =
      layer.stride == 1 ? inp.coords
                        : downsample_coords(inp.coords, 2 * inp.stride);
  int32_t out_stride = inp.stride * layer.stride;
  SparseTensor st = apply_on_tape(tape, inp, layer, std::move(out_coords),
                                  out_stride);
  if (layer.stride == 1) {
    st.origin_map = inp.origin_map;
    st.centroids = inp.centroids;
  }
  return st;
}

SparseTensor sparse_transpose_conv(Tape& tape, const SparseTensor& inp,
                                   SparseConvLayer& layer,
                                   const std::vector<Coord>& target_coords) {
  require(layer.transpose, ErrorCategory::contract,
          "sparse_transpose_conv called with a non-transpose layer");
  require(!target_coords.empty(), ErrorCategory::contract,
          "sparse_transpose_conv: empty target coordinate set");
  int32_t out_stride = layer.stride == 2 ? inp.stride / 2 : inp.stride;
  require(out_stride >= 1, ErrorCategory::contract,
          "sparse_transpose_conv: input stride ", inp.stride,
          " cannot be upsampled");
  return apply_on_tape(tape, inp, layer, target_coords, out_stride);
}

SparseTensor skip_concat(Tape& tape, const SparseTensor& a,
                         const SparseTensor& b) {
  require(a.coords.size() == b.coords.size(), ErrorCategory::alignment,
          "skip_concat coordinate count mismatch: ", a.coords.size(), " vs ",
          b.coords.size());
  for (size_t i = 0; i < a.coords.size(); ++i)
    require(a.coords[i] == b.coords[i], ErrorCategory::alignment,
            "skip_concat coordinate mismatch at row ", i);
  require(a.stride == b.stride, ErrorCategory::alignment,
          "skip_concat stride mismatch");
  SparseTensor st;
  st.coords = a.coords;
  st.feats = tape.concat_cols(a.feats, b.feats);
  st.stride = a.stride;
  st.voxel_size = a.voxel_size;
  st.origin_map = a.origin_map;
  st.centroids = a.centroids;
  return st;
}

namespace kern {

void sparse_apply_acc(const KernelMap& map, const double* in, const double* k,
                      double* out, int64_t c_in, int64_t c_out) {
#pragma omp parallel for schedule(static)
  for (int64_t j = 0; j < map.out_rows; ++j) {
    double* oj = out + j * c_out;
    for (const auto& [s, i] : map.by_out[j]) {
      const double* xi = in + i * c_in;
      const double* ks = k + static_cast<int64_t>(s) * c_in * c_out;
      for (int64_t p = 0; p < c_in; ++p) {
        double v = xi[p];
        if (v == 0.0) continue;
        const double* kp = ks + p * c_out;
        for (int64_t q = 0; q < c_out; ++q) oj[q] += v * kp[q];
      }
    }
  }
}

void sparse_feat_grad_acc(const KernelMap& map, const double* gout,
                          const double* k, double* gin, int64_t c_in,
                          int64_t c_out) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < map.in_rows; ++i) {
    double* gi = gin + i * c_in;
    for (const auto& [s, j] : map.by_in[i]) {
      const double* gj = gout + j * c_out;
      const double* ks = k + static_cast<int64_t>(s) * c_in * c_out;
      for (int64_t p = 0; p < c_in; ++p) {
        const double* kp = ks + p * c_out;
        double acc = 0.0;
        for (int64_t q = 0; q < c_out; ++q) acc += gj[q] * kp[q];
        gi[p] += acc;
      }
    }
  }
}

void sparse_kernel_grad_acc(const KernelMap& map, const double* in,
                            const double* gout, double* gk, int64_t c_in,
                            int64_t c_out) {
  int s3 = static_cast<int>(map.pairs.size());
#pragma omp parallel for schedule(static)
  for (int s = 0; s < s3; ++s) {
    double* gs = gk + static_cast<int64_t>(s) * c_in * c_out;
    for (const auto& [i, j] : map.pairs[s]) {
      const double* xi = in + i * c_in;
      const double* gj = gout + j * c_out;
      for (int64_t p = 0; p < c_in; ++p) {
        double v = xi[p];
        if (v == 0.0) continue;
        double* gp = gs + p * c_out;
        for (int64_t q = 0; q < c_out; ++q) gp[q] += v * gj[q];
      }
    }
  }
}

}  // namespace kern

namespace ref {

void sparse_apply_acc(const KernelMap& map, const double* in, const double* k,
                      double* out, int64_t c_in, int64_t c_out) {
  for (int64_t j = 0; j < map.out_rows; ++j) {
    double* oj = out + j * c_out;
    for (const auto& [s, i] : map.by_out[j]) {
      const double* xi = in + i * c_in;
      const double* ks = k + static_cast<int64_t>(s) * c_in * c_out;
      for (int64_t p = 0; p < c_in; ++p) {
        double v = xi[p];
        if (v == 0.0) continue;
        const double* kp = ks + p * c_out;
        for (int64_t q = 0; q < c_out; ++q) oj[q] += v * kp[q];
      }
    }
  }
}

void sparse_feat_grad_acc(const KernelMap& map, const double* gout,
                          const double* k, double* gin, int64_t c_in,
                          int64_t c_out) {
  for (int64_t i = 0; i < map.in_rows; ++i) {
    double* gi = gin + i * c_in;
    for (const auto& [s, j] : map.by_in[i]) {
      const double* gj = gout + j * c_out;
      const double* ks = k + static_cast<int64_t>(s) * c_in * c_out;
      for (int64_t p = 0; p < c_in; ++p) {
        const double* kp = ks + p * c_out;
        double acc = 0.0;
        for (int64_t q = 0; q < c_out; ++q) acc += gj[q] * kp[q];
        gi[p] += acc;
      }
    }
  }
}

void sparse_kernel_grad_acc(const KernelMap& map, const double* in,
                            const double* gout, double* gk, int64_t c_in,
                            int64_t c_out) {
  for (int s = 0; s < static_cast<int>(map.pairs.size()); ++s) {
    double* gs = gk + static_cast<int64_t>(s) * c_in * c_out;
    for (const auto& [i, j] : map.pairs[s]) {
      const double* xi = in + i * c_in;
      const double* gj = gout + j * c_out;
      for (int64_t p = 0; p < c_in; ++p) {
        double v = xi[p];
        if (v == 0.0) continue;
        double* gp = gs + p * c_out;
        for (int64_t q = 0; q < c_out; ++q) gp[q] += v * gj[q];
      }
    }
  }
}

}  // namespace ref

}  // namespace imf
