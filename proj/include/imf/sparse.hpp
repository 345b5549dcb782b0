#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include "imf/tape.hpp"

namespace imf {

using Coord = std::array<int32_t, 3>;

// Open-addressing hash map from voxel coordinate to row index.
// Linear probing over a power-of-two table; deterministic by construction.
class CoordMap {
 public:
  CoordMap() { grow(16); }
  explicit CoordMap(int64_t expected) { grow(expected * 2 + 16); }

  // Returns the row stored for c, or -1.
  int32_t find(const Coord& c) const;
  // Inserts c -> row if absent; returns the resident row either way.
  int32_t insert(const Coord& c, int32_t row);
  int64_t size() const { return size_; }

 private:
  void grow(int64_t min_cap);
  static uint64_t hash(const Coord& c);
  std::vector<Coord> keys_;
  std::vector<int32_t> rows_;
  uint64_t mask_ = 0;
  int64_t size_ = 0;
};

// Voxel coordinates plus per-voxel feature rows living on a tape.
struct SparseTensor {
  std::vector<Coord> coords;  // unique, lexicographically sorted
  Var feats;                  // [M, C]
  int32_t stride = 1;         // voxel units, power of two
  double voxel_size = 1.0;    // meters
  // stride-1 tensors only: voxel row -> original input point indices
  std::vector<std::vector<int32_t>> origin_map;
  // stride-1 tensors only: mean position of absorbed points, meters
  std::vector<std::array<double, 3>> centroids;

  int64_t size() const { return static_cast<int64_t>(coords.size()); }
};

// Index pairs (input_row, output_row) per kernel offset, plus CSR views.
// by_out[j] and by_in[i] list (offset, partner_row) in ascending offset
// order, giving every parallel consumer a fixed accumulation order.
struct KernelMap {
  int extent = 3;
  int64_t in_rows = 0;
  int64_t out_rows = 0;
  std::vector<std::vector<std::pair<int32_t, int32_t>>> pairs;
  std::vector<std::vector<std::pair<int32_t, int32_t>>> by_out;
  std::vector<std::vector<std::pair<int32_t, int32_t>>> by_in;

  int64_t offset_count() const { return static_cast<int64_t>(pairs.size()); }
  int64_t total_pairs() const;
  void build_csr();
};

// Decode offset index s in [0, extent^3) to (dx, dy, dz) in [-h, h]^3.
Coord offset_delta(int s, int extent);

struct SparseConvLayer {
  Parameter kernel;  // [S, C_in, C_out]
  int stride = 1;    // 1 or 2
  int kernel_extent = 3;
  bool transpose = false;

  int64_t s() const { return kernel.tensor.shape[0]; }
  int64_t c_in() const { return kernel.tensor.shape[1]; }
  int64_t c_out() const { return kernel.tensor.shape[2]; }

  static SparseConvLayer create(const std::string& name, int64_t c_in,
                                int64_t c_out, int extent, int stride,
                                bool transpose, Rng& rng);
};

// floor(p / voxel_size) per axis.
Coord quantize(const std::array<double, 3>& p, double voxel_size);

// Unique coordinates floored to multiples of `factor` (voxel units),
// lexicographically sorted.
std::vector<Coord> downsample_coords(const std::vector<Coord>& coords,
                                     int32_t factor);

// Quantize points into a stride-1 sparse tensor. A voxel's feature row is
// the mean of the attributes of its absorbed points (an all-ones column when
// attributes is null). Feature/centroid sums run in value-sorted order so the
// result is invariant to input permutation, bit for bit.
SparseTensor voxelize(Tape& tape, const std::vector<std::array<double, 3>>& points,
                      const Tensor* attributes, double voxel_size);

// Pairs (i, j) such that coords_fine[i] == coords_coarse[j] + delta * step.
// For a forward conv, fine = input and coarse = output; for a transpose conv
// the same geometry applies with input and output swapped.
KernelMap build_kernel_map_geom(const std::vector<Coord>& fine,
                                const std::vector<Coord>& coarse, int extent,
                                int32_t step, bool fine_is_input);

// Spec-facing wrapper: map from inp to out_coords for the given layer.
KernelMap build_kernel_map(const SparseTensor& inp,
                           const std::vector<Coord>& out_coords,
                           const SparseConvLayer& layer);

SparseTensor sparse_conv(Tape& tape, const SparseTensor& inp,
                         SparseConvLayer& layer);

SparseTensor sparse_transpose_conv(Tape& tape, const SparseTensor& inp,
                                   SparseConvLayer& layer,
                                   const std::vector<Coord>& target_coords);

// Concatenate features along channels; coordinate sets must match exactly.
SparseTensor skip_concat(Tape& tape, const SparseTensor& a, const SparseTensor& b);

// Gather/scatter kernels behind the tape ops. kern:: is OpenMP-parallel,
// ref:: is the serial twin; both accumulate and agree bit-for-bit.
namespace kern {
void sparse_apply_acc(const KernelMap& map, const double* in, const double* k,
                      double* out, int64_t c_in, int64_t c_out);
void sparse_feat_grad_acc(const KernelMap& map, const double* gout,
                          const double* k, double* gin, int64_t c_in,
                          int64_t c_out);
void sparse_kernel_grad_acc(const KernelMap& map, const double* in,
                            const double* gout, double* gk, int64_t c_in,
                            int64_t c_out);
}  // namespace kern
namespace ref {
void sparse_apply_acc(const KernelMap& map, const double* in, const double* k,
                      double* out, int64_t c_in, int64_t c_out);
void sparse_feat_grad_acc(const KernelMap& map, const double* gout,
                          const double* k, double* gin, int64_t c_in,
                          int64_t c_out);
void sparse_kernel_grad_acc(const KernelMap& map, const double* in,
                            const double* gout, double* gk, int64_t c_in,
                            int64_t c_out);
}  // namespace ref

}  // namespace imf
