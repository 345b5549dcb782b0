#include "imf/dam.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "imf/kdtree.hpp"
#include "imf/ply_io.hpp"

namespace imf {

SparseConvLayer& resolve_target_layer(Model& model, const std::string& name) {
  if (name == "final") return model.final_conv;
  if (name == "dec1") return model.dec[0];
  if (name == "dec2") return model.dec[1];
  if (name == "dec3") return model.dec[2];
  if (name == "dec4") return model.dec[3];
  raise(ErrorCategory::contract, "unknown target layer '", name,
        "' (expected final or dec1..dec4)");
}

const SparseTensor& target_layer_output(const ForwardArtifacts& art,
                                        const std::string& name) {
  if (name == "final") return art.final_conv;
  if (name == "dec1") return art.decoder[0];
  if (name == "dec2") return art.decoder[1];
  if (name == "dec3") return art.decoder[2];
  if (name == "dec4") return art.decoder[3];
  raise(ErrorCategory::contract, "unknown target layer '", name, "'");
}

int64_t voxel_row_of_point(const SparseTensor& input, const PointCloud& cloud,
                           int64_t point_index) {
  require(point_index >= 0 && point_index < cloud.size(),
          ErrorCategory::contract, "query point ", point_index,
          " out of range");
  Coord c = quantize(cloud.xyz[point_index], input.voxel_size);
  auto it = std::lower_bound(input.coords.begin(), input.coords.end(), c);
  require(it != input.coords.end() && *it == c, ErrorCategory::contract,
          "query point not present in the voxelization");
  return it - input.coords.begin();
}

KernelGradient kernel_gradient(Model& model, Tape& tape,
                               const ForwardArtifacts& art, int64_t query_row,
                               int element_i, const std::string& target_layer) {
  SparseConvLayer& layer = resolve_target_layer(model, target_layer);
  require(layer.kernel.numel() > 0, ErrorCategory::contract,
          "target layer has no kernel");
  const Tensor& desc = tape.value(art.final_conv.feats);
  require(element_i >= 0 && element_i < desc.shape[1], ErrorCategory::contract,
          "descriptor element ", element_i, " out of range");
  require(query_row >= 0 && query_row < desc.shape[0], ErrorCategory::contract,
          "query row ", query_row, " out of range");

  model.zero_grad();
  tape.zero_grad();
  Var d_i = tape.pick(art.final_conv.feats,
                      query_row * desc.shape[1] + element_i);
  tape.backward(d_i);

  KernelGradient kg;
  kg.element = element_i;
  kg.sign_phi = tape.value(d_i).values[0] > 0.0 ? 1.0 : -1.0;
  kg.g = Tensor(layer.kernel.tensor.shape);
  const auto& grad = layer.kernel.tensor.grad;
  if (!grad.empty())
    for (int64_t k = 0; k < kg.g.numel(); ++k)
      kg.g.values[k] = grad[k] * kg.sign_phi;
  return kg;
}

Tensor channel_weights(const KernelGradient& g) {
  require(g.g.ndim() == 3, ErrorCategory::dimension,
          "kernel gradient must be [S, C_in, C]");
  int64_t s = g.g.shape[0], cin = g.g.shape[1], c = g.g.shape[2];
  Tensor x({c});
  for (int64_t si = 0; si < s; ++si)
    for (int64_t ci = 0; ci < cin; ++ci)
      for (int64_t k = 0; k < c; ++k)
        x.values[k] += g.g.values[(si * cin + ci) * c + k];
  return x;
}

std::vector<double> element_activation(const Tensor& f, const Tensor& x) {
  require(f.ndim() == 2 && f.shape[1] == x.numel(), ErrorCategory::dimension,
          "element_activation width mismatch ", f.shape_str(), " vs ",
          x.shape_str());
  int64_t m = f.shape[0], c = f.shape[1];
  std::vector<double> dam(m, 0.0);
  double inv_c = 1.0 / static_cast<double>(c);
  for (int64_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (int64_t k = 0; k < c; ++k) acc += f.at(i, k) * x.values[k];
    dam[i] = acc * inv_c;
  }
  return dam;
}

HeatMap descriptor_activation_map(Model& model, ForwardPass& fp,
                                  const PointCloud& cloud, int64_t query_point,
                                  const std::string& target_layer) {
  const SparseTensor& target = target_layer_output(fp.art, target_layer);
  const Tensor& f = fp.tape->value(target.feats);
  const Tensor& desc = fp.tape->value(fp.art.final_conv.feats);
  int64_t query_row = voxel_row_of_point(fp.art.input, cloud, query_point);

  std::vector<double> sum(f.shape[0], 0.0);
  for (int element = 0; element < desc.shape[1]; ++element) {
    KernelGradient kg =
        kernel_gradient(model, *fp.tape, fp.art, query_row, element, target_layer);
    Tensor x = channel_weights(kg);
    std::vector<double> dam_i = element_activation(f, x);
    for (int64_t m = 0; m < f.shape[0]; ++m) sum[m] += dam_i[m];
  }
  for (double& v : sum) v = std::max(0.0, v);

  HeatMap map;
  map.scores = std::move(sum);
  map.target_layer = target_layer;
  map.query_point = query_point;

  // Each original point inherits the score of the target-layer voxel that
  // contains it (stride-1 membership, then floor to the target stride).
  map.point_scores.assign(cloud.size(), 0.0);
  CoordMap lut(target.size());
  for (int64_t r = 0; r < target.size(); ++r)
    lut.insert(target.coords[r], static_cast<int32_t>(r));
  for (int64_t p = 0; p < cloud.size(); ++p) {
    Coord c1 = quantize(cloud.xyz[p], fp.art.input.voxel_size);
    Coord ct{};
    for (int k = 0; k < 3; ++k) {
      int32_t q = c1[k] / target.stride;
      if (c1[k] % target.stride != 0 && c1[k] < 0) --q;
      ct[k] = q * target.stride;
    }
    int32_t row = lut.find(ct);
    if (row >= 0) map.point_scores[p] = map.scores[row];
  }
  return map;
}

HeatMap descriptor_activation_map(Model& model, const PointCloud& cloud,
                                  const Image* image, int64_t query_point,
                                  const std::string& target_layer) {
  ForwardPass fp = model.forward(cloud, image);
  return descriptor_activation_map(model, fp, cloud, query_point, target_layer);
}

Lemma1Report verify_lemma1(SparseConvLayer& layer, const Tensor& a,
                           const LossFn& loss_fn) {
  require(layer.kernel_extent == 1, ErrorCategory::contract,
          "verify_lemma1 requires a 1x1x1 layer");
  int64_t m = a.shape[0], cin = a.shape[1], cout = layer.c_out();
  require(cin == layer.c_in(), ErrorCategory::dimension,
          "verify_lemma1 input width mismatch");

  auto run = [&](const LossFn& fn) {
    layer.kernel.zero_grad();
    Tape tape;
    SparseTensor in;
    in.coords.resize(m);
    for (int64_t i = 0; i < m; ++i)
      in.coords[i] = Coord{static_cast<int32_t>(i), 0, 0};
    in.feats = tape.leaf(a);
    in.stride = 1;
    in.voxel_size = 1.0;
    SparseTensor z = sparse_conv(tape, in, layer);
    Var loss = fn(tape, z.feats);
    tape.backward(loss);
    return std::make_pair(Tensor(layer.kernel.tensor.shape,
                                 layer.kernel.tensor.grad),
                          tape.grad_tensor(z.feats));
  };

  auto [kgrad, zgrad] = run(loss_fn);

  Lemma1Report rep;
  for (int64_t i = 0; i < cin; ++i)
    for (int64_t j = 0; j < cout; ++j) {
      double closed = 0.0, literal = 0.0;
      for (int64_t n = 0; n < m; ++n) {
        closed += zgrad.at(n, j) * a.at(n, i);
        if (j < cin) literal += zgrad.at(n, j) * a.at(n, j);
      }
      double tape_val = kgrad.values[i * cout + j];
      rep.max_discrepancy =
          std::max(rep.max_discrepancy, std::fabs(tape_val - closed));
      if (j < cin)
        rep.max_discrepancy_literal =
            std::max(rep.max_discrepancy_literal, std::fabs(tape_val - literal));
    }

  // Column locality: bump the output-gradient weights in one column and
  // check that only that kernel-gradient column moves.
  rep.column_locality_ok = true;
  Rng rng(0xc01);
  Tensor base_weights = Tensor::uniform({m, cout}, rng, -1.0, 1.0);
  auto weighted = [&](const Tensor& w) {
    return [w](Tape& t, Var z) { return t.sum(t.mul(z, t.leaf(w))); };
  };
  auto [k0, z0] = run(weighted(base_weights));
  (void)z0;
  for (int64_t j = 0; j < cout; ++j) {
    Tensor bumped = base_weights;
    for (int64_t n = 0; n < m; ++n) bumped.at(n, j) += 0.37;
    auto [k1, z1] = run(weighted(bumped));
    (void)z1;
    for (int64_t i = 0; i < cin; ++i)
      for (int64_t q = 0; q < cout; ++q) {
        double delta = k1.values[i * cout + q] - k0.values[i * cout + q];
        if (q == j) continue;
        if (delta != 0.0) rep.column_locality_ok = false;
      }
  }
  return rep;
}

void export_heatmap(const std::string& ply_path, const std::string& json_path,
                    const HeatMap& map, const PointCloud& cloud) {
  require(static_cast<int64_t>(map.point_scores.size()) == cloud.size(),
          ErrorCategory::contract, "heat map does not match the cloud");
  double max_score = 0.0, min_score = 0.0, mean = 0.0;
  for (double v : map.point_scores) {
    max_score = std::max(max_score, v);
    min_score = std::min(min_score, v);
    mean += v;
  }
  mean /= static_cast<double>(map.point_scores.size());

  PointCloud colored;
  colored.xyz = cloud.xyz;
  colored.rgb.resize(cloud.size());
  for (int64_t i = 0; i < cloud.size(); ++i) {
    double s = max_score > 0 ? map.point_scores[i] / max_score : 0.0;
    colored.rgb[i] = {static_cast<uint8_t>(std::lround(255 * s)), 0,
                      static_cast<uint8_t>(std::lround(255 * (1.0 - s)))};
  }
  // KNN-10 neighborhood of the query point in black.
  std::vector<double> flat;
  flat.reserve(cloud.size() * 3);
  for (const Vec3& p : cloud.xyz) flat.insert(flat.end(), p.begin(), p.end());
  KdTree tree(flat.data(), cloud.size(), 3);
  auto knn = tree.knn(cloud.xyz[map.query_point].data(), 10);
  for (const auto& r : knn) colored.rgb[r.index] = {0, 0, 0};
  colored.rgb[map.query_point] = {0, 0, 0};
  ply_write(ply_path, colored);

  nlohmann::json side;
  side["query_point"] = map.query_point;
  side["target_layer"] = map.target_layer;
  side["points"] = cloud.size();
  side["score_min"] = min_score;
  side["score_max"] = max_score;
  side["score_mean"] = mean;
  atomic_write(json_path, side.dump(2) + "\n");
}

}  // namespace imf
