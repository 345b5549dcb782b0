#include "imf/network.hpp"

#include <algorithm>
#include <cmath>

#include "imf/kdtree.hpp"

namespace imf {

void NetworkConfig::validate() const {
  std::vector<std::string> errs;
  for (int c : encoder_channels)
    if (c < 1) errs.push_back("encoder_channels entries must be >= 1");
  for (int c : decoder_channels)
    if (c < 1) errs.push_back("decoder_channels entries must be >= 1");
  if (descriptor_dim < 1) errs.push_back("descriptor_dim must be >= 1");
  if (voxel_size <= 0) errs.push_back("voxel_size must be > 0");
  if (kernel_extent < 1 || kernel_extent % 2 == 0)
    errs.push_back("kernel_extent must be odd and >= 1");
  if (image_encoder.out_dim < 1) errs.push_back("image out_dim must be >= 1");
  if (fusion.c_t < 0) errs.push_back("fusion c_t must be >= 0");
  if (fusion.self_attention_layers < 0)
    errs.push_back("self_attention_layers must be >= 0");
  if (!errs.empty()) {
    std::string all;
    for (const auto& e : errs) all += (all.empty() ? "" : "; ") + e;
    raise(ErrorCategory::config, "invalid network config: ", all);
  }
}

void TrainConfig::validate() const {
  std::vector<std::string> errs;
  if (!(negative_margin > positive_margin && positive_margin >= 0))
    errs.push_back("margins must satisfy m_n > m_p >= 0");
  if (epochs < 0) errs.push_back("epochs must be >= 0");
  if (anchors_per_pair < 1) errs.push_back("anchors_per_pair must be >= 1");
  if (!errs.empty()) {
    std::string all;
    for (const auto& e : errs) all += (all.empty() ? "" : "; ") + e;
    raise(ErrorCategory::config, "invalid train config: ", all);
  }
}

Model::Model(const NetworkConfig& c, uint64_t seed) : cfg(c), init_seed(seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, 0x1217ULL));
  const auto& ec = cfg.encoder_channels;
  const auto& dc = cfg.decoder_channels;
  int ext = cfg.kernel_extent;

  int in_ch = 1;
  for (int k = 0; k < 4; ++k) {
    int stride = k == 0 ? 1 : 2;
    enc[k] = SparseConvLayer::create("enc" + std::to_string(k + 1) + ".kernel",
                                     in_ch, ec[k], ext, stride, false, rng);
    enc_norm[k] = RowNormLayer("enc" + std::to_string(k + 1) + ".norm", ec[k]);
    in_ch = ec[k];
  }

  if (cfg.with_fusion) {
    image_encoder = ImageEncoder(cfg.image_encoder, "image", rng);
    fusion = AttentionFusion(ec[3], cfg.image_encoder.out_dim, cfg.fusion,
                             "fusion", rng);
  }

  int bottleneck_ch = ec[3];
  if (cfg.with_fusion && cfg.decoder_concat_fusion) bottleneck_ch = 2 * ec[3];

  std::array<int, 4> dec_in = {bottleneck_ch, dc[0] + ec[2], dc[1] + ec[1],
                               dc[2] + ec[0]};
  for (int k = 0; k < 4; ++k) {
    int stride = k < 3 ? 2 : 1;
    dec[k] = SparseConvLayer::create("dec" + std::to_string(k + 1) + ".kernel",
                                     dec_in[k], dc[k], ext, stride, true, rng);
    dec_norm[k] = RowNormLayer("dec" + std::to_string(k + 1) + ".norm", dc[k]);
  }
  final_conv = SparseConvLayer::create("final.kernel", dc[3],
                                       cfg.descriptor_dim, 1, 1, false, rng);

  if (cfg.with_fusion && cfg.fusion.positions == FusionPositions::three) {
    for (int k = 0; k < 3; ++k) {
      FusionConfig fc = cfg.fusion;
      fc.positions = FusionPositions::single;
      decoder_fusion.emplace_back(dc[k], cfg.image_encoder.out_dim, fc,
                                  "fusion.dec" + std::to_string(k + 1), rng);
    }
  }
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> ps;
  for (int k = 0; k < 4; ++k) {
    ps.push_back(&enc[k].kernel);
    ps.push_back(&enc_norm[k].gain);
    ps.push_back(&enc_norm[k].bias);
  }
  if (cfg.with_fusion) {
    for (Parameter* p : image_encoder.parameters()) ps.push_back(p);
    for (Parameter* p : fusion.parameters()) ps.push_back(p);
    for (auto& df : decoder_fusion)
      for (Parameter* p : df.parameters()) ps.push_back(p);
  }
  for (int k = 0; k < 4; ++k) {
    ps.push_back(&dec[k].kernel);
    ps.push_back(&dec_norm[k].gain);
    ps.push_back(&dec_norm[k].bias);
  }
  ps.push_back(&final_conv.kernel);
  return ps;
}

void Model::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

int64_t Model::parameter_count() {
  int64_t n = 0;
  for (Parameter* p : parameters()) n += p->numel();
  return n;
}

ForwardArtifacts Model::run(Tape& tape, const PointCloud& cloud,
                            const Image* image) {
  require(cloud.size() > 0, ErrorCategory::contract,
          "extract_descriptors: empty cloud");
  if (cfg.with_fusion)
    require(image != nullptr, ErrorCategory::contract,
            "extract_descriptors: fusion model needs an image");

  ForwardArtifacts art;
  // Structure-only occupancy features; color never enters the point branch.
  art.input = voxelize(tape, cloud.xyz, nullptr, cfg.voxel_size);

  SparseTensor x = art.input;
  for (int k = 0; k < 4; ++k) {
    x = sparse_conv(tape, x, enc[k]);
    x.feats = tape.relu(
        tape.row_feature_norm(x.feats, enc_norm[k].gain, enc_norm[k].bias));
    art.encoder[k] = x;
  }

  art.bottleneck = art.encoder[3];
  if (cfg.with_fusion) {
    art.image_feats = image_encoder.encode(tape, *image);
    art.fusion = fusion.fuse(tape, art.encoder[3].feats, art.image_feats.feats);
    art.has_fusion = true;
    art.bottleneck.feats =
        cfg.decoder_concat_fusion
            ? tape.concat_cols(art.encoder[3].feats, art.fusion.texture)
            : art.fusion.fused;
  }

  SparseTensor d = art.bottleneck;
  for (int k = 0; k < 4; ++k) {
    const std::vector<Coord>& target =
        k < 3 ? art.encoder[2 - k].coords : d.coords;
    d = sparse_transpose_conv(tape, d, dec[k], target);
    d.feats = tape.relu(
        tape.row_feature_norm(d.feats, dec_norm[k].gain, dec_norm[k].bias));
    if (k < 3 && !decoder_fusion.empty())
      d.feats = decoder_fusion[k].fuse(tape, d.feats, art.image_feats.feats).fused;
    art.decoder[k] = d;
    if (k < 3) d = skip_concat(tape, d, art.encoder[2 - k]);
  }

  art.final_conv = sparse_conv(tape, d, final_conv);
  art.descriptors = cfg.normalize_output
                        ? tape.row_normalize(art.final_conv.feats)
                        : art.final_conv.feats;
  return art;
}

ForwardPass Model::forward(const PointCloud& cloud, const Image* image) {
  ForwardPass fp;
  fp.tape = std::make_unique<Tape>();
  fp.art = run(*fp.tape, cloud, image);
  return fp;
}

DescriptorField Model::extract_descriptors(const PointCloud& cloud,
                                           const Image* image) {
  ForwardPass fp = forward(cloud, image);
  DescriptorField field;
  field.descriptors = fp.tape->value(fp.art.descriptors);
  field.coords = fp.art.input.coords;
  field.point_map = fp.art.input.origin_map;
  field.points_xyz = fp.art.input.centroids;
  field.voxel_size = cfg.voxel_size;
  return field;
}

namespace {

// Hardest-negative indices for each anchor row against all rows of the
// opposite field, excluding the positive partner and optionally a per-anchor
// exclusion list (sorted ascending). Deterministic: scan in ascending index
// order with strict improvement.
std::vector<int64_t> mine_hardest(const Tensor& anchors_from,
                                  const std::vector<int64_t>& anchor_rows,
                                  const Tensor& opposite,
                                  const std::vector<int64_t>& partner_rows,
                                  const std::vector<std::vector<int32_t>>* excl) {
  int64_t n = static_cast<int64_t>(anchor_rows.size());
  int64_t m = opposite.shape[0], c = opposite.shape[1];
  std::vector<int64_t> out(n, -1);
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    const double* a = anchors_from.values.data() + anchor_rows[i] * c;
    const std::vector<int32_t>* skip = excl ? &(*excl)[i] : nullptr;
    double best = std::numeric_limits<double>::infinity();
    int64_t best_k = -1;
    for (int64_t k = 0; k < m; ++k) {
      if (k == partner_rows[i]) continue;
      if (skip && std::binary_search(skip->begin(), skip->end(),
                                     static_cast<int32_t>(k)))
        continue;
      const double* b = opposite.values.data() + k * c;
      double d = 0.0;
      for (int64_t j = 0; j < c; ++j) {
        double x = a[j] - b[j];
        d += x * x;
      }
      if (d < best) {
        best = d;
        best_k = k;
      }
    }
    out[i] = best_k;
  }
  return out;
}

Var hinge_sq_mean(Tape& tape, Var dist, double margin, bool above) {
  // above: relu(d - margin)^2, else relu(margin - d)^2
  Var h = above ? tape.add_scalar(dist, -margin)
                : tape.add_scalar(tape.scale(dist, -1.0), margin);
  Var r = tape.relu(h);
  return tape.mean(tape.mul(r, r));
}

Var row_distance(Tape& tape, Var a, Var b) {
  Var diff = tape.sub(a, b);
  return tape.sqrt_elem(tape.row_sum(tape.mul(diff, diff)));
}

}  // namespace

Var hardest_contrastive_loss(Tape& tape, Var desc_a, Var desc_b,
                             const std::vector<PosPair>& pos_pairs,
                             const TrainConfig& cfg,
                             const NegativeExclusion* exclusion) {
  cfg.validate();
  require(!pos_pairs.empty(), ErrorCategory::contract,
          "hardest_contrastive_loss: no positive pairs");
  const Tensor& ta = tape.value(desc_a);
  const Tensor& tb = tape.value(desc_b);
  require(ta.shape[1] == tb.shape[1], ErrorCategory::dimension,
          "descriptor width mismatch ", ta.shape_str(), " vs ", tb.shape_str());
  require(ta.shape[0] > 1 && tb.shape[0] > 1, ErrorCategory::contract,
          "hardest_contrastive_loss: no negative candidates available");
  if (exclusion)
    require(exclusion->for_a.size() == pos_pairs.size() &&
                exclusion->for_b.size() == pos_pairs.size(),
            ErrorCategory::dimension,
            "negative exclusion lists do not match the positive pairs");

  std::vector<int64_t> rows_a, rows_b;
  rows_a.reserve(pos_pairs.size());
  rows_b.reserve(pos_pairs.size());
  for (const PosPair& p : pos_pairs) {
    require(p.a >= 0 && p.a < ta.shape[0] && p.b >= 0 && p.b < tb.shape[0],
            ErrorCategory::contract, "positive pair index out of range");
    rows_a.push_back(p.a);
    rows_b.push_back(p.b);
  }

  std::vector<int64_t> neg_in_b = mine_hardest(
      ta, rows_a, tb, rows_b, exclusion ? &exclusion->for_a : nullptr);
  std::vector<int64_t> neg_in_a = mine_hardest(
      tb, rows_b, ta, rows_a, exclusion ? &exclusion->for_b : nullptr);
  for (size_t i = 0; i < neg_in_b.size(); ++i)
    require(neg_in_b[i] >= 0 && neg_in_a[i] >= 0, ErrorCategory::contract,
            "hardest_contrastive_loss: an anchor has no negative candidates");

  Var a_pos = tape.gather_rows(desc_a, rows_a);
  Var b_pos = tape.gather_rows(desc_b, rows_b);
  Var a_neg = tape.gather_rows(desc_b, neg_in_b);
  Var b_neg = tape.gather_rows(desc_a, neg_in_a);

  Var pos_term =
      hinge_sq_mean(tape, row_distance(tape, a_pos, b_pos), cfg.positive_margin,
                    true);
  Var neg_a = hinge_sq_mean(tape, row_distance(tape, a_pos, a_neg),
                            cfg.negative_margin, false);
  Var neg_b = hinge_sq_mean(tape, row_distance(tape, b_pos, b_neg),
                            cfg.negative_margin, false);
  return tape.add(pos_term, tape.scale(tape.add(neg_a, neg_b), 0.5));
}

std::vector<PosPair> gt_positive_pairs(const std::vector<Vec3>& src_centroids,
                                       const std::vector<Vec3>& dst_centroids,
                                       const RigidTransform& gt, double radius) {
  std::vector<PosPair> pairs;
  if (src_centroids.empty() || dst_centroids.empty()) return pairs;
  std::vector<double> flat;
  flat.reserve(dst_centroids.size() * 3);
  for (const Vec3& p : dst_centroids)
    flat.insert(flat.end(), p.begin(), p.end());
  KdTree tree(flat.data(), static_cast<int64_t>(dst_centroids.size()), 3);
  for (size_t i = 0; i < src_centroids.size(); ++i) {
    Vec3 q = gt.apply(src_centroids[i]);
    auto r = tree.nearest(q.data());
    if (r.dist <= radius)
      pairs.push_back({static_cast<int32_t>(i), static_cast<int32_t>(r.index)});
  }
  return pairs;
}

TrainReport train(Model& model, const std::vector<RegistrationPair>& dataset,
                  const TrainConfig& cfg) {
  cfg.validate();
  require(!dataset.empty(), ErrorCategory::contract, "train: empty dataset");
  double radius =
      cfg.pos_match_radius > 0 ? cfg.pos_match_radius : 1.5 * model.cfg.voxel_size;

  std::vector<Tensor> velocity;
  for (Parameter* p : model.parameters())
    velocity.push_back(Tensor(p->tensor.shape));

  TrainReport report;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int64_t> order(dataset.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
    Rng erng(derive_seed(cfg.seed, 0xe90c * (epoch + 1)));
    erng.shuffle(order);
    int64_t steps_this_epoch =
        cfg.pairs_per_epoch > 0
            ? std::min<int64_t>(cfg.pairs_per_epoch, order.size())
            : static_cast<int64_t>(order.size());

    double loss_sum = 0.0;
    int64_t loss_count = 0;
    for (int64_t s = 0; s < steps_this_epoch; ++s) {
      const RegistrationPair& pair = dataset[order[s]];
      Tape tape;
      ForwardArtifacts fa = model.run(tape, pair.src_cloud,
                                      model.cfg.with_fusion ? &pair.src_image
                                                            : nullptr);
      ForwardArtifacts fb = model.run(tape, pair.dst_cloud,
                                      model.cfg.with_fusion ? &pair.dst_image
                                                            : nullptr);
      std::vector<PosPair> pos = gt_positive_pairs(
          fa.input.centroids, fb.input.centroids, pair.gt, radius);
      if (static_cast<int>(pos.size()) > cfg.anchors_per_pair) {
        Rng srng(derive_seed(cfg.seed, 0xa3c0 + epoch * 10007 + s));
        std::vector<int64_t> keep =
            srng.sample_indices(static_cast<int64_t>(pos.size()),
                                cfg.anchors_per_pair);
        std::sort(keep.begin(), keep.end());
        std::vector<PosPair> sampled;
        sampled.reserve(keep.size());
        for (int64_t k : keep) sampled.push_back(pos[k]);
        pos = std::move(sampled);
      }
      if (pos.size() < 2) {
        ++report.skipped_steps;
        continue;
      }

      // Keep spatial near-matches of each anchor out of the negative pool;
      // at metric resolution they are correct answers, not negatives.
      double excl_radius = cfg.neg_exclude_radius_m > 0
                               ? cfg.neg_exclude_radius_m
                               : 2.0 * model.cfg.voxel_size;
      NegativeExclusion excl;
      {
        std::vector<double> flat_b, flat_a;
        for (const Vec3& p : fb.input.centroids)
          flat_b.insert(flat_b.end(), p.begin(), p.end());
        for (const Vec3& p : fa.input.centroids)
          flat_a.insert(flat_a.end(), p.begin(), p.end());
        KdTree tree_b(flat_b.data(),
                      static_cast<int64_t>(fb.input.centroids.size()), 3);
        KdTree tree_a(flat_a.data(),
                      static_cast<int64_t>(fa.input.centroids.size()), 3);
        RigidTransform inv = pair.gt.inverse();
        excl.for_a.resize(pos.size());
        excl.for_b.resize(pos.size());
        for (size_t pi = 0; pi < pos.size(); ++pi) {
          Vec3 qa = pair.gt.apply(fa.input.centroids[pos[pi].a]);
          for (int64_t row : tree_b.radius(qa.data(), excl_radius))
            excl.for_a[pi].push_back(static_cast<int32_t>(row));
          Vec3 qb = inv.apply(fb.input.centroids[pos[pi].b]);
          for (int64_t row : tree_a.radius(qb.data(), excl_radius))
            excl.for_b[pi].push_back(static_cast<int32_t>(row));
        }
      }

      Var loss = hardest_contrastive_loss(tape, fa.descriptors, fb.descriptors,
                                          pos, cfg, &excl);
      double loss_value = tape.value(loss).values[0];
      require(std::isfinite(loss_value), ErrorCategory::training,
              "non-finite loss at epoch ", epoch, " step ", s);
      tape.backward(loss);

      auto params = model.parameters();
      for (size_t pi = 0; pi < params.size(); ++pi) {
        Parameter& p = *params[pi];
        if (p.tensor.grad.empty()) continue;
        for (int64_t j = 0; j < p.numel(); ++j) {
          velocity[pi].values[j] = cfg.momentum * velocity[pi].values[j] +
                                   p.tensor.grad[j];
          p.tensor.values[j] -= cfg.learning_rate * velocity[pi].values[j];
        }
      }
      model.zero_grad();

      loss_sum += loss_value;
      ++loss_count;
      ++report.steps;
      report.final_loss = loss_value;
    }
    report.epoch_mean_loss.push_back(loss_count > 0 ? loss_sum / loss_count
                                                    : 0.0);
  }
  return report;
}

CorrespondenceSet match_descriptors(const DescriptorField& a,
                                    const DescriptorField& b,
                                    bool mutual_only) {
  return match_descriptors(a.descriptors, b.descriptors, mutual_only);
}

}  // namespace imf
