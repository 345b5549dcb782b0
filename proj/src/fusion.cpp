#include "imf/fusion.hpp"

#include <cmath>

namespace imf {

Var attention_weights(Tape& tape, Var q, Var k, int c_t) {
  const Tensor& tq = tape.value(q);
  const Tensor& tk = tape.value(k);
  require(tq.ndim() == 2 && tk.ndim() == 2 && tq.shape[1] == tk.shape[1],
          ErrorCategory::dimension, "attention_weights width mismatch ",
          tq.shape_str(), " vs ", tk.shape_str());
  require(c_t >= 1, ErrorCategory::contract, "attention c_t must be >= 1");
  Var logits = tape.matmul(q, tape.transpose(k));
  return tape.row_softmax(logits, std::sqrt(static_cast<double>(c_t)));
}

namespace {

Parameter make_linear_w(const std::string& name, int64_t in, int64_t out,
                        Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(in));
  return Parameter(name, Tensor::uniform({in, out}, rng, -bound, bound));
}

Parameter make_linear_b(const std::string& name, int64_t out, Rng& rng) {
  return Parameter(name, Tensor::uniform({out}, rng, -0.01, 0.01));
}

}  // namespace

AttentionFusion::AttentionFusion(int point_dim, int image_dim, FusionConfig cfg,
                                 const std::string& prefix, Rng& rng)
    : cfg_(cfg), point_dim_(point_dim), image_dim_(image_dim) {
  c_t_ = cfg.c_t > 0 ? cfg.c_t : std::max(1, point_dim / 2);
  bool swapped = cfg.query_source == QuerySource::image;
  int64_t q_in = swapped ? image_dim : point_dim;
  int64_t kv_in = swapped ? point_dim : image_dim;
  wq_ = make_linear_w(prefix + ".q.weight", q_in, c_t_, rng);
  bq_ = make_linear_b(prefix + ".q.bias", c_t_, rng);
  wk_ = make_linear_w(prefix + ".k.weight", kv_in, c_t_, rng);
  bk_ = make_linear_b(prefix + ".k.bias", c_t_, rng);
  wv_ = make_linear_w(prefix + ".v.weight", kv_in, c_t_, rng);
  bv_ = make_linear_b(prefix + ".v.bias", c_t_, rng);
  wo_ = make_linear_w(prefix + ".out.weight", c_t_, point_dim, rng);
  bo_ = make_linear_b(prefix + ".out.bias", point_dim, rng);
  for (int i = 0; i < cfg.self_attention_layers; ++i) {
    std::string p = prefix + ".sa" + std::to_string(i + 1);
    SelfAttn sa;
    sa.wq = make_linear_w(p + ".q.weight", point_dim, c_t_, rng);
    sa.bq = make_linear_b(p + ".q.bias", c_t_, rng);
    sa.wk = make_linear_w(p + ".k.weight", point_dim, c_t_, rng);
    sa.bk = make_linear_b(p + ".k.bias", c_t_, rng);
    sa.wv = make_linear_w(p + ".v.weight", point_dim, c_t_, rng);
    sa.bv = make_linear_b(p + ".v.bias", c_t_, rng);
    sa.wo = make_linear_w(p + ".out.weight", c_t_, point_dim, rng);
    sa.bo = make_linear_b(p + ".out.bias", point_dim, rng);
    self_layers_.push_back(std::move(sa));
  }
}

std::array<Var, 3> AttentionFusion::project_qkv(Tape& tape, Var f_pe, Var f_ie) {
  Var q_src = cfg_.query_source == QuerySource::image ? f_ie : f_pe;
  Var kv_src = cfg_.query_source == QuerySource::image ? f_pe : f_ie;
  Var q = tape.linear(q_src, wq_, bq_);
  Var k = tape.linear(kv_src, wk_, bk_);
  Var v = tape.linear(kv_src, wv_, bv_);
  return {q, k, v};
}

FusionOutput AttentionFusion::fuse(Tape& tape, Var f_pe, Var f_ie) {
  require(tape.value(f_pe).cols() == point_dim_, ErrorCategory::dimension,
          "fuse: point features have ", tape.value(f_pe).cols(),
          " channels, expected ", point_dim_);
  require(tape.value(f_ie).cols() == image_dim_, ErrorCategory::dimension,
          "fuse: image features have ", tape.value(f_ie).cols(),
          " channels, expected ", image_dim_);
  auto [q, k, v] = project_qkv(tape, f_pe, f_ie);
  Var w = attention_weights(tape, q, k, c_t_);

  Var texture;
  Var weights_out;
  if (cfg_.query_source == QuerySource::image) {
    // Image cells attended over points; route the per-cell aggregate back to
    // points via the transposed weights so the output stays per-point.
    Var cell_agg = tape.matmul(w, v);
    Var wt = tape.transpose(w);
    texture = tape.linear(tape.matmul(wt, cell_agg), wo_, bo_);
    weights_out = wt;
  } else {
    texture = tape.linear(tape.matmul(w, v), wo_, bo_);
    weights_out = w;
  }

  // Optional self-attention layers refine the texture contribution so the
  // fused output stays an exact structure + texture sum.
  for (SelfAttn& sa : self_layers_) {
    Var fused_now = tape.add(f_pe, texture);
    Var sq = tape.linear(fused_now, sa.wq, sa.bq);
    Var sk = tape.linear(fused_now, sa.wk, sa.bk);
    Var sv = tape.linear(fused_now, sa.wv, sa.bv);
    Var a = attention_weights(tape, sq, sk, c_t_);
    Var delta = tape.linear(tape.matmul(a, sv), sa.wo, sa.bo);
    texture = tape.add(texture, delta);
  }

  FusionOutput out;
  out.texture = texture;
  out.fused = tape.add(f_pe, texture);
  out.weights = weights_out;
  return out;
}

std::vector<Parameter*> AttentionFusion::parameters() {
  std::vector<Parameter*> ps = {&wq_, &bq_, &wk_, &bk_, &wv_, &bv_, &wo_, &bo_};
  for (SelfAttn& sa : self_layers_) {
    for (Parameter* p : {&sa.wq, &sa.bq, &sa.wk, &sa.bk, &sa.wv, &sa.bv,
                         &sa.wo, &sa.bo})
      ps.push_back(p);
  }
  return ps;
}

}  // namespace imf
