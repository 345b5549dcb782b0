#pragma once

#include <array>

#include "imf/tape.hpp"

namespace imf {

enum class QuerySource { points, image };
enum class FusionPositions { single, three };

struct FusionConfig {
  int c_t = 0;  // QKV projection width; 0 means half the point feature width
  int self_attention_layers = 0;
  QuerySource query_source = QuerySource::points;
  FusionPositions positions = FusionPositions::single;
};

struct FusionOutput {
  Var fused;    // [M4, C4], computed as structure + texture in one addition
  Var weights;  // [M4, M_i] attention weights kept for inspection
  Var texture;  // [M4, C4]
};

// W = row_softmax(Q K^T / sqrt(c_t)); each row is a distribution over keys.
Var attention_weights(Tape& tape, Var q, Var k, int c_t);

// Single-head cross-attention fusing weighted image texture into per-point
// structure features. With query_source == image the projection roles swap:
// image cells attend over points and the aggregate is mapped back to points
// through the transposed weight matrix.
class AttentionFusion {
 public:
  AttentionFusion() = default;
  AttentionFusion(int point_dim, int image_dim, FusionConfig cfg,
                  const std::string& prefix, Rng& rng);

  std::array<Var, 3> project_qkv(Tape& tape, Var f_pe, Var f_ie);
  FusionOutput fuse(Tape& tape, Var f_pe, Var f_ie);

  std::vector<Parameter*> parameters();
  int c_t() const { return c_t_; }
  const FusionConfig& config() const { return cfg_; }

 private:
  FusionConfig cfg_;
  int point_dim_ = 0;
  int image_dim_ = 0;
  int c_t_ = 0;
  Parameter wq_, bq_, wk_, bk_, wv_, bv_;
  Parameter wo_, bo_;  // output MLP c_t -> C4
  struct SelfAttn {
    Parameter wq, bq, wk, bk, wv, bv, wo, bo;
  };
  std::vector<SelfAttn> self_layers_;
};

}  // namespace imf
