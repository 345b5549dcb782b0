#pragma once

#include <functional>
#include <string>

#include "imf/network.hpp"

namespace imf {

// Signed kernel gradient of one descriptor element, Eq. G = (dd_i/dw) * phi.
struct KernelGradient {
  Tensor g;  // [S, C_in, C]
  int element = 0;
  double sign_phi = 1.0;  // +1 iff d_i > 0, -1 otherwise (including 0)
};

// Per-point significance of the inputs to one query point's descriptor.
struct HeatMap {
  std::vector<double> scores;        // per target-layer row, nonnegative
  std::vector<double> point_scores;  // mapped to original input points
  std::string target_layer;
  int64_t query_point = -1;  // original point index
};

// Target layers: "final" (default, the 1x1x1 descriptor conv) or
// "dec1".."dec4" (decoder blocks; F is the block output).
SparseConvLayer& resolve_target_layer(Model& model, const std::string& name);
const SparseTensor& target_layer_output(const ForwardArtifacts& art,
                                        const std::string& name);

// Voxel row of the stride-1 input tensor holding the given original point.
int64_t voxel_row_of_point(const SparseTensor& input, const PointCloud& cloud,
                           int64_t point_index);

// Backward from the query voxel's element_i of the raw descriptor output to
// the target layer's kernel; gradients are zeroed before each call.
KernelGradient kernel_gradient(Model& model, Tape& tape,
                               const ForwardArtifacts& art, int64_t query_row,
                               int element_i,
                               const std::string& target_layer = "final");

// Eq. x_k = sum_S sum_Cin G[s][c][k].
Tensor channel_weights(const KernelGradient& g);

// Eq. dam_i[m] = (1/C) sum_k F[m][k] * x[k].
std::vector<double> element_activation(const Tensor& f, const Tensor& x);

// Full DAM: loop every descriptor element, sum the channel-weighted
// activations, rectify, and map voxel scores to the original points.
HeatMap descriptor_activation_map(Model& model, const PointCloud& cloud,
                                  const Image* image, int64_t query_point,
                                  const std::string& target_layer = "final");
HeatMap descriptor_activation_map(Model& model, ForwardPass& fp,
                                  const PointCloud& cloud, int64_t query_point,
                                  const std::string& target_layer = "final");

using LossFn = std::function<Var(Tape&, Var)>;

struct Lemma1Report {
  // tape kernel gradient vs the closed form sum_n dE/dZ[n][j] * A[n][i]
  double max_discrepancy = 0.0;
  // same vs the literal form with A[n][j] (reported for reference)
  double max_discrepancy_literal = 0.0;
  bool column_locality_ok = false;
};

// Numerical check of the kernel/feature-map gradient identity on a 1x1x1
// layer, plus the column-locality property: perturbing dE/dZ column j
// changes exactly kernel-gradient column j.
Lemma1Report verify_lemma1(SparseConvLayer& layer, const Tensor& a,
                           const LossFn& loss_fn);

// Red-to-blue ASCII PLY over normalized scores with the query point's KNN-10
// neighborhood in black, plus a sidecar JSON with score statistics.
void export_heatmap(const std::string& ply_path, const std::string& json_path,
                    const HeatMap& map, const PointCloud& cloud);

}  // namespace imf
