#pragma once

#include <memory>
#include <optional>

#include "imf/fusion.hpp"
#include "imf/image.hpp"
#include "imf/scene.hpp"
#include "imf/sparse.hpp"

namespace imf {

struct NetworkConfig {
  std::array<int, 4> encoder_channels{16, 32, 64, 128};
  std::array<int, 4> decoder_channels{64, 64, 64, 64};
  ImageEncoderConfig image_encoder;  // out_dim is C_i
  int descriptor_dim = 32;
  double voxel_size = 0.05;
  FusionConfig fusion;
  bool normalize_output = true;
  bool with_fusion = true;
  // Bottleneck variant: concatenate texture instead of the elementwise
  // addition (kept selectable for comparison; addition is the default).
  bool decoder_concat_fusion = false;
  int kernel_extent = 3;

  void validate() const;
};

struct RowNormLayer {
  Parameter gain;
  Parameter bias;
  RowNormLayer() = default;
  RowNormLayer(const std::string& prefix, int64_t c)
      : gain(prefix + ".gain", Tensor({c}, 1.0)),
        bias(prefix + ".bias", Tensor({c}, 0.0)) {}
};

// Unit-norm point descriptors with the map back to original points.
struct DescriptorField {
  Tensor descriptors;  // [M, C]
  std::vector<Coord> coords;
  std::vector<std::vector<int32_t>> point_map;
  std::vector<Vec3> points_xyz;  // voxel centroids, meters
  double voxel_size = 0.0;
  int64_t size() const { return descriptors.shape.empty() ? 0 : descriptors.shape[0]; }
};

// Everything one forward pass produced, referencing Vars on the tape the
// pass ran on. Kept around for the loss, DAM, and inspection.
struct ForwardArtifacts {
  SparseTensor input;  // stride-1 voxelization
  std::array<SparseTensor, 4> encoder;
  SparseTensor bottleneck;
  std::array<SparseTensor, 4> decoder;
  SparseTensor final_conv;  // raw descriptors, the DAM target layer output
  Var descriptors;          // row-normalized when configured
  bool has_fusion = false;
  FusionOutput fusion;
  ImageFeatures image_feats;
};

struct ForwardPass {
  std::unique_ptr<Tape> tape;
  ForwardArtifacts art;
};

class Model {
 public:
  Model(const NetworkConfig& cfg, uint64_t seed);

  ForwardArtifacts run(Tape& tape, const PointCloud& cloud, const Image* image);
  ForwardPass forward(const PointCloud& cloud, const Image* image);
  DescriptorField extract_descriptors(const PointCloud& cloud, const Image* image);

  std::vector<Parameter*> parameters();
  void zero_grad();
  int64_t parameter_count();

  NetworkConfig cfg;
  uint64_t init_seed = 0;

  std::array<SparseConvLayer, 4> enc;
  std::array<RowNormLayer, 4> enc_norm;
  std::array<SparseConvLayer, 4> dec;
  std::array<RowNormLayer, 4> dec_norm;
  SparseConvLayer final_conv;  // 1x1x1, the default DAM target layer
  ImageEncoder image_encoder;
  AttentionFusion fusion;
  std::vector<AttentionFusion> decoder_fusion;  // fusion_positions == three
};

struct TrainConfig {
  double positive_margin = 0.1;  // m_p
  double negative_margin = 1.4;  // m_n
  double learning_rate = 0.1;
  double momentum = 0.9;
  int epochs = 10;
  int pairs_per_epoch = 0;  // 0 = whole dataset each epoch
  int anchors_per_pair = 256;
  // positive correspondence radius in meters; 0 = 1.5 * voxel_size
  double pos_match_radius = 0.0;
  // negatives within this distance of an anchor's true position are not
  // mined (they are correct matches at metric resolution); 0 = 2 * voxel_size
  double neg_exclude_radius_m = 0.0;
  uint64_t seed = 0;

  void validate() const;
};

struct PosPair {
  int32_t a = -1;  // row in the first field
  int32_t b = -1;  // row in the second field
};

// Extra rows (sorted ascending) removed from the negative candidate pool of
// each anchor, on top of the positive partner itself. Used to keep spatial
// near-matches of an anchor out of the hardest-negative mining.
struct NegativeExclusion {
  std::vector<std::vector<int32_t>> for_a;  // per pair: rows of field b
  std::vector<std::vector<int32_t>> for_b;  // per pair: rows of field a
};

// FCGF-style hardest-contrastive loss: mean positive hinge^2 plus half the
// two per-side means of hardest-negative hinges, negatives mined over all
// rows of the opposite field excluding the positive partner (and any rows
// listed in `exclusion`).
Var hardest_contrastive_loss(Tape& tape, Var desc_a, Var desc_b,
                             const std::vector<PosPair>& pos_pairs,
                             const TrainConfig& cfg,
                             const NegativeExclusion* exclusion = nullptr);

// Ground-truth positive voxel correspondences: source centroids mapped by gt
// to nearest destination centroid within the radius.
std::vector<PosPair> gt_positive_pairs(const std::vector<Vec3>& src_centroids,
                                       const std::vector<Vec3>& dst_centroids,
                                       const RigidTransform& gt, double radius);

struct TrainReport {
  std::vector<double> epoch_mean_loss;
  int64_t steps = 0;
  int64_t skipped_steps = 0;
  double final_loss = 0.0;
};

TrainReport train(Model& model, const std::vector<RegistrationPair>& dataset,
                  const TrainConfig& cfg);

// Spec-facing overload of descriptor matching on full fields.
CorrespondenceSet match_descriptors(const DescriptorField& a,
                                    const DescriptorField& b, bool mutual_only);

}  // namespace imf
