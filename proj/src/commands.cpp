#include "imf/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "imf/gradcheck.hpp"
#include "imf/kdtree.hpp"
#include "imf/parallel.hpp"
#include "imf/ply_io.hpp"

namespace imf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCategory::io, "cannot open ", path);
  json j = json::parse(in, nullptr, false);
  require(!j.is_discarded(), ErrorCategory::parse, path, ": invalid JSON");
  return j;
}

void collect_unknown(const json& j, const std::vector<std::string>& allowed,
                     const std::string& scope, std::vector<std::string>& errs) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      errs.push_back("unknown key '" + scope + it.key() + "'");
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json transform_to_json(const RigidTransform& t) {
  std::vector<double> r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r.push_back(t.r[i][j]);
  return json{{"r", r}, {"t", std::vector<double>{t.t[0], t.t[1], t.t[2]}}};
}

RigidTransform transform_from_json(const json& j) {
  RigidTransform t;
  const auto& r = j.at("r");
  require(r.size() == 9, ErrorCategory::parse, "gt rotation must have 9 entries");
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) t.r[i][k] = r[i * 3 + k];
  const auto& tr = j.at("t");
  require(tr.size() == 3, ErrorCategory::parse, "gt translation must have 3 entries");
  for (int i = 0; i < 3; ++i) t.t[i] = tr[i];
  return t;
}

}  // namespace

json RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["threads"] = threads;
  j["network"] = network_config_to_json(network);
  j["train"] = train_config_to_json(train);
  j["scene"] = {
      {"planes", scene.planes},
      {"boxes", scene.boxes},
      {"spheres", scene.spheres},
      {"texture", scene.texture == TextureMode::ambiguous_structure
                      ? "ambiguous_structure"
                      : "distinct_color"},
      {"points_per_primitive", scene.points_per_primitive},
      {"noise_sigma", scene.noise_sigma},
      {"extent", scene.extent},
      {"grid_layout", scene.grid_layout},
      {"primitive_size", scene.primitive_size},
      {"color_offset", scene.color_offset}};
  j["dataset"] = {{"scenes", dataset.scenes},
                  {"pairs_per_scene", dataset.pairs_per_scene},
                  {"overlap_fraction", dataset.overlap_fraction},
                  {"transform_magnitude_deg", dataset.transform_magnitude_deg},
                  {"translation_magnitude_m", dataset.translation_magnitude_m},
                  {"image_width", dataset.image_width},
                  {"image_height", dataset.image_height},
                  {"splat_radius", dataset.splat_radius},
                  {"overlap_voxel", dataset.overlap_voxel},
                  {"partial_view", dataset.partial_view}};
  j["metrics"] = {{"tau1", metrics.tau1},
                  {"tau2", metrics.tau2},
                  {"rte_max", metrics.rte_max},
                  {"rre_max", metrics.rre_max},
                  {"eval_anchors", metrics.eval_anchors},
                  {"mutual_only", metrics.mutual_only},
                  {"run_ransac", metrics.run_ransac}};
  j["ransac"] = {{"iterations", ransac_iterations},
                 {"inlier_dist", ransac_inlier_dist}};
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  std::vector<std::string> errs;
  collect_unknown(j,
                  {"seed", "threads", "network", "train", "scene", "dataset",
                   "metrics", "ransac"},
                  "", errs);
  RunConfig cfg;
  try {
    if (j.contains("seed")) cfg.seed = j["seed"];
    if (j.contains("threads")) cfg.threads = j["threads"];
  } catch (const json::exception& e) {
    errs.push_back(std::string("top-level type error: ") + e.what());
  }
  if (j.contains("network")) {
    try {
      cfg.network = network_config_from_json(j["network"]);
    } catch (const Error& e) {
      errs.push_back(e.what());
    }
  }
  if (j.contains("train")) {
    try {
      cfg.train = train_config_from_json(j["train"]);
    } catch (const Error& e) {
      errs.push_back(e.what());
    }
  }
  if (j.contains("scene")) {
    const json& s = j["scene"];
    collect_unknown(s,
                    {"planes", "boxes", "spheres", "texture",
                     "points_per_primitive", "noise_sigma", "extent",
                     "grid_layout", "primitive_size", "color_offset"},
                    "scene.", errs);
    try {
      if (s.contains("planes")) cfg.scene.planes = s["planes"];
      if (s.contains("boxes")) cfg.scene.boxes = s["boxes"];
      if (s.contains("spheres")) cfg.scene.spheres = s["spheres"];
      if (s.contains("texture")) {
        std::string t = s["texture"];
        if (t == "ambiguous_structure")
          cfg.scene.texture = TextureMode::ambiguous_structure;
        else if (t == "distinct_color")
          cfg.scene.texture = TextureMode::distinct_color;
        else
          errs.push_back("scene.texture must be distinct_color|ambiguous_structure");
      }
      if (s.contains("points_per_primitive"))
        cfg.scene.points_per_primitive = s["points_per_primitive"];
      if (s.contains("noise_sigma")) cfg.scene.noise_sigma = s["noise_sigma"];
      if (s.contains("extent")) cfg.scene.extent = s["extent"];
      if (s.contains("grid_layout")) cfg.scene.grid_layout = s["grid_layout"];
      if (s.contains("primitive_size"))
        cfg.scene.primitive_size = s["primitive_size"];
      if (s.contains("color_offset")) cfg.scene.color_offset = s["color_offset"];
    } catch (const json::exception& e) {
      errs.push_back(std::string("scene type error: ") + e.what());
    }
  }
  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    collect_unknown(d,
                    {"scenes", "pairs_per_scene", "overlap_fraction",
                     "transform_magnitude_deg", "translation_magnitude_m",
                     "image_width", "image_height", "splat_radius",
                     "overlap_voxel", "partial_view"},
                    "dataset.", errs);
    try {
      if (d.contains("scenes")) cfg.dataset.scenes = d["scenes"];
      if (d.contains("pairs_per_scene"))
        cfg.dataset.pairs_per_scene = d["pairs_per_scene"];
      if (d.contains("overlap_fraction"))
        cfg.dataset.overlap_fraction = d["overlap_fraction"];
      if (d.contains("transform_magnitude_deg"))
        cfg.dataset.transform_magnitude_deg = d["transform_magnitude_deg"];
      if (d.contains("translation_magnitude_m"))
        cfg.dataset.translation_magnitude_m = d["translation_magnitude_m"];
      if (d.contains("image_width")) cfg.dataset.image_width = d["image_width"];
      if (d.contains("image_height"))
        cfg.dataset.image_height = d["image_height"];
      if (d.contains("splat_radius"))
        cfg.dataset.splat_radius = d["splat_radius"];
      if (d.contains("overlap_voxel"))
        cfg.dataset.overlap_voxel = d["overlap_voxel"];
      if (d.contains("partial_view"))
        cfg.dataset.partial_view = d["partial_view"];
    } catch (const json::exception& e) {
      errs.push_back(std::string("dataset type error: ") + e.what());
    }
  }
  if (j.contains("metrics")) {
    const json& m = j["metrics"];
    collect_unknown(m,
                    {"tau1", "tau2", "rte_max", "rre_max", "eval_anchors",
                     "mutual_only", "run_ransac"},
                    "metrics.", errs);
    try {
      if (m.contains("tau1")) cfg.metrics.tau1 = m["tau1"];
      if (m.contains("tau2")) cfg.metrics.tau2 = m["tau2"];
      if (m.contains("rte_max")) cfg.metrics.rte_max = m["rte_max"];
      if (m.contains("rre_max")) cfg.metrics.rre_max = m["rre_max"];
      if (m.contains("eval_anchors")) cfg.metrics.eval_anchors = m["eval_anchors"];
      if (m.contains("mutual_only")) cfg.metrics.mutual_only = m["mutual_only"];
      if (m.contains("run_ransac")) cfg.metrics.run_ransac = m["run_ransac"];
    } catch (const json::exception& e) {
      errs.push_back(std::string("metrics type error: ") + e.what());
    }
  }
  if (j.contains("ransac")) {
    const json& r = j["ransac"];
    collect_unknown(r, {"iterations", "inlier_dist"}, "ransac.", errs);
    try {
      if (r.contains("iterations")) cfg.ransac_iterations = r["iterations"];
      if (r.contains("inlier_dist")) cfg.ransac_inlier_dist = r["inlier_dist"];
    } catch (const json::exception& e) {
      errs.push_back(std::string("ransac type error: ") + e.what());
    }
  }
  if (!errs.empty()) {
    std::string all;
    for (const auto& e : errs) all += (all.empty() ? "" : "; ") + e;
    raise(ErrorCategory::config, "config validation failed: ", all);
  }
  return cfg;
}

void json_set_path(json& j, const std::string& dotted, const std::string& value) {
  json* node = &j;
  size_t start = 0;
  while (true) {
    size_t dot = dotted.find('.', start);
    std::string key = dotted.substr(start, dot - start);
    require(!key.empty(), ErrorCategory::config, "--set: empty key in '",
            dotted, "'");
    if (dot == std::string::npos) {
      json parsed = json::parse(value, nullptr, false);
      (*node)[key] = parsed.is_discarded() ? json(value) : parsed;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

RunConfig load_run_config(const std::string& config_path,
                          const std::vector<std::string>& overrides) {
  json j = config_path.empty() ? json::object() : read_json_file(config_path);
  for (const std::string& kv : overrides) {
    size_t eq = kv.find('=');
    require(eq != std::string::npos, ErrorCategory::config,
            "--set expects key.path=value, got '", kv, "'");
    json_set_path(j, kv.substr(0, eq), kv.substr(eq + 1));
  }
  return RunConfig::from_json(j);
}

int cmd_synth(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  json manifest;
  manifest["overlap_voxel"] = cfg.dataset.overlap_voxel;
  manifest["pairs"] = json::array();

  int pair_id = 0;
  for (int s = 0; s < cfg.dataset.scenes; ++s) {
    SceneConfig sc = cfg.scene;
    sc.seed = derive_seed(cfg.seed, 1000 + s);
    PointCloud scene = generate_scene(sc);
    for (int p = 0; p < cfg.dataset.pairs_per_scene; ++p) {
      PairConfig pc;
      pc.overlap_fraction = cfg.dataset.overlap_fraction;
      pc.transform_magnitude_deg = cfg.dataset.transform_magnitude_deg;
      pc.translation_magnitude_m = cfg.dataset.translation_magnitude_m;
      pc.image_width = cfg.dataset.image_width;
      pc.image_height = cfg.dataset.image_height;
      pc.splat_radius = cfg.dataset.splat_radius;
      pc.overlap_voxel = cfg.dataset.overlap_voxel;
      pc.partial_view = cfg.dataset.partial_view;
      pc.seed = derive_seed(cfg.seed, 50000 + s * 1000 + p);
      RegistrationPair pair = make_pair(scene, pc);

      char stem[32];
      std::snprintf(stem, sizeof stem, "pair%04d", pair_id);
      std::string base = std::string(stem);
      ply_write(out_dir + "/" + base + "_src.ply", pair.src_cloud);
      ply_write(out_dir + "/" + base + "_dst.ply", pair.dst_cloud);
      ppm_write(out_dir + "/" + base + "_src.ppm", pair.src_image);
      ppm_write(out_dir + "/" + base + "_dst.ppm", pair.dst_image);

      json row;
      row["id"] = pair_id;
      row["scene"] = s;
      row["src_ply"] = base + "_src.ply";
      row["dst_ply"] = base + "_dst.ply";
      row["src_ppm"] = base + "_src.ppm";
      row["dst_ppm"] = base + "_dst.ppm";
      row["gt"] = transform_to_json(pair.gt);
      row["overlap"] = pair.overlap_fraction;
      manifest["pairs"].push_back(row);
      ++pair_id;
    }
  }
  atomic_write(out_dir + "/manifest.json", manifest.dump(2) + "\n");
  return 0;
}

std::vector<DatasetEntry> load_dataset(const std::string& dir) {
  json manifest = read_json_file(dir + "/manifest.json");
  std::vector<DatasetEntry> out;
  for (const json& row : manifest.at("pairs")) {
    DatasetEntry e;
    e.id = row.at("id");
    e.scene = row.at("scene");
    e.pair.src_cloud = ply_read(dir + "/" + row.at("src_ply").get<std::string>());
    e.pair.dst_cloud = ply_read(dir + "/" + row.at("dst_ply").get<std::string>());
    e.pair.src_image = ppm_read(dir + "/" + row.at("src_ppm").get<std::string>());
    e.pair.dst_image = ppm_read(dir + "/" + row.at("dst_ppm").get<std::string>());
    e.pair.gt = transform_from_json(row.at("gt"));
    e.pair.overlap_fraction = row.at("overlap");
    out.push_back(std::move(e));
  }
  return out;
}

int cmd_train(const RunConfig& cfg, const std::string& dataset_dir,
              const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::vector<DatasetEntry> entries = load_dataset(dataset_dir);
  std::vector<RegistrationPair> pairs;
  pairs.reserve(entries.size());
  for (auto& e : entries) pairs.push_back(std::move(e.pair));

  Model model(cfg.network, cfg.seed);
  TrainConfig tcfg = cfg.train;
  tcfg.seed = cfg.seed;
  TrainReport report = train(model, pairs, tcfg);

  save_checkpoint(out_dir + "/model.ckpt", model);
  std::string csv = "epoch,mean_loss\n";
  for (size_t e = 0; e < report.epoch_mean_loss.size(); ++e)
    csv += std::to_string(e) + "," + fmt_double(report.epoch_mean_loss[e]) + "\n";
  atomic_write(out_dir + "/loss_curve.csv", csv);

  json rep;
  rep["epochs"] = report.epoch_mean_loss.size();
  rep["steps"] = report.steps;
  rep["skipped_steps"] = report.skipped_steps;
  rep["final_loss"] = report.final_loss;
  rep["epoch_mean_loss"] = report.epoch_mean_loss;
  rep["parameters"] = model.parameter_count();
  atomic_write(out_dir + "/train_report.json", rep.dump(2) + "\n");
  return 0;
}

int cmd_extract(const RunConfig& cfg, const std::string& checkpoint,
                const std::string& cloud_ply, const std::string& image_ppm,
                const std::string& out_file) {
  (void)cfg;
  Model model = load_checkpoint(checkpoint);
  PointCloud cloud = ply_read(cloud_ply);
  Image image;
  if (!image_ppm.empty()) image = ppm_read(image_ppm);
  DescriptorField field = model.extract_descriptors(
      cloud, image_ppm.empty() ? nullptr : &image);
  save_descriptor_field(out_file, field);
  return 0;
}

namespace {

// Anchor rows of the source field lying in the overlap region.
std::vector<int32_t> overlap_anchors(const DescriptorField& src,
                                     const DescriptorField& dst,
                                     const RigidTransform& gt, int max_anchors,
                                     uint64_t seed) {
  std::vector<double> flat;
  flat.reserve(dst.points_xyz.size() * 3);
  for (const Vec3& p : dst.points_xyz)
    flat.insert(flat.end(), p.begin(), p.end());
  KdTree tree(flat.data(), static_cast<int64_t>(dst.points_xyz.size()), 3);
  std::vector<int32_t> anchors;
  double radius = 2.0 * src.voxel_size;
  for (size_t i = 0; i < src.points_xyz.size(); ++i) {
    Vec3 q = gt.apply(src.points_xyz[i]);
    if (tree.nearest(q.data()).dist <= radius)
      anchors.push_back(static_cast<int32_t>(i));
  }
  if (static_cast<int>(anchors.size()) > max_anchors) {
    Rng rng(seed);
    std::vector<int64_t> keep = rng.sample_indices(
        static_cast<int64_t>(anchors.size()), max_anchors);
    std::sort(keep.begin(), keep.end());
    std::vector<int32_t> sampled;
    sampled.reserve(keep.size());
    for (int64_t k : keep) sampled.push_back(anchors[k]);
    anchors = std::move(sampled);
  }
  return anchors;
}

PairEval evaluate_pair(Model& model, const DatasetEntry& entry,
                       const RunConfig& cfg) {
  const RegistrationPair& pair = entry.pair;
  DescriptorField src = model.extract_descriptors(
      pair.src_cloud, model.cfg.with_fusion ? &pair.src_image : nullptr);
  DescriptorField dst = model.extract_descriptors(
      pair.dst_cloud, model.cfg.with_fusion ? &pair.dst_image : nullptr);

  PairEval ev;
  ev.id = entry.id;
  ev.scene = entry.scene;

  CorrespondenceSet matches =
      match_descriptors(src, dst, cfg.metrics.mutual_only);
  std::vector<int32_t> anchors =
      overlap_anchors(src, dst, pair.gt, cfg.metrics.eval_anchors,
                      derive_seed(cfg.seed, 0xa0c0 + entry.id));
  if (!anchors.empty()) {
    ev.anchor_dists = anchor_match_distances(anchors, matches, pair.gt,
                                             src.points_xyz, dst.points_xyz);
    ev.inlier_ratio =
        inlier_ratio_from_distances(ev.anchor_dists, cfg.metrics.tau1);
  }
  ev.matched = ev.inlier_ratio > cfg.metrics.tau2;

  if (cfg.metrics.run_ransac) {
    RansacParams params;
    params.iterations = cfg.ransac_iterations;
    params.inlier_dist = cfg.ransac_inlier_dist;
    params.seed = derive_seed(cfg.seed, 0x2a5ac + entry.id);
    RansacResult res =
        ransac_register(matches, src.points_xyz, dst.points_xyz, params);
    ev.registered = res.success;
    if (res.success) {
      TransformErrors te = transform_errors(res.transform, pair.gt);
      ev.rte_m = te.rte_m;
      ev.rre_deg = te.rre_deg;
      ev.success = te.rte_m <= cfg.metrics.rte_max &&
                   te.rre_deg <= cfg.metrics.rre_max;
    }
  }
  return ev;
}

}  // namespace

EvaluateOutput evaluate_dataset(Model& model,
                                const std::vector<DatasetEntry>& dataset,
                                const RunConfig& cfg) {
  require(!dataset.empty(), ErrorCategory::contract, "evaluate: empty dataset");
  EvaluateOutput out;
  out.pairs.resize(dataset.size());
#pragma omp parallel for schedule(dynamic)
  for (int64_t i = 0; i < static_cast<int64_t>(dataset.size()); ++i)
    out.pairs[i] = evaluate_pair(model, dataset[i], cfg);

  std::vector<double> ratios;
  std::vector<std::vector<double>> per_pair_dists;
  std::vector<PairResult> results;
  std::map<int, std::vector<double>> per_scene;
  for (const PairEval& ev : out.pairs) {
    ratios.push_back(ev.inlier_ratio);
    per_pair_dists.push_back(ev.anchor_dists);
    per_scene[ev.scene].push_back(ev.inlier_ratio);
    PairResult r;
    r.inlier_ratio = ev.inlier_ratio;
    r.matched = ev.matched;
    r.registered = ev.registered;
    r.rte_m = ev.rte_m;
    r.rre_deg = ev.rre_deg;
    r.success = ev.success;
    results.push_back(r);
  }
  out.fmr = feature_match_recall(ratios, cfg.metrics.tau2);

  std::vector<double> scene_fmr;
  for (auto& [scene, rs] : per_scene)
    scene_fmr.push_back(feature_match_recall(rs, cfg.metrics.tau2));

  json rep;
  rep["pairs"] = json::array();
  for (const PairEval& ev : out.pairs) {
    rep["pairs"].push_back(json{{"id", ev.id},
                                {"scene", ev.scene},
                                {"inlier_ratio", ev.inlier_ratio},
                                {"matched", ev.matched},
                                {"registered", ev.registered},
                                {"rte_m", ev.rte_m},
                                {"rre_deg", ev.rre_deg},
                                {"success", ev.success}});
  }
  rep["fmr"] = out.fmr;
  rep["tau1"] = cfg.metrics.tau1;
  rep["tau2"] = cfg.metrics.tau2;
  rep["fmr_scene_std"] = population_std(scene_fmr);
  rep["mean_inlier_ratio"] = [&] {
    double s = 0;
    for (double r : ratios) s += r;
    return s / ratios.size();
  }();
  if (cfg.metrics.run_ransac) {
    rep["success_rate"] =
        success_rate(results, cfg.metrics.rte_max, cfg.metrics.rre_max);
    double rte = 0, rre = 0;
    int64_t n = 0;
    for (const PairEval& ev : out.pairs)
      if (ev.registered) {
        rte += ev.rte_m;
        rre += ev.rre_deg;
        ++n;
      }
    rep["mean_rte_m"] = n ? rte / n : 0.0;
    rep["mean_rre_deg"] = n ? rre / n : 0.0;
    rep["registered_pairs"] = n;
  }
  out.report = rep;

  // curves
  std::vector<double> tau2_grid, tau1_grid;
  for (int i = 0; i <= 50; ++i) tau2_grid.push_back(i * 0.01);
  for (int i = 0; i <= 30; ++i) tau1_grid.push_back(i * 0.01);
  std::string c2 = "tau2,fmr\n";
  for (const CurvePoint& p : fmr_vs_tau2(ratios, tau2_grid))
    c2 += fmt_double(p.threshold) + "," + fmt_double(p.value) + "\n";
  out.fmr_vs_tau2_csv = c2;
  std::string c1 = "tau1,fmr\n";
  for (const CurvePoint& p :
       fmr_vs_tau1(per_pair_dists, tau1_grid, cfg.metrics.tau2))
    c1 += fmt_double(p.threshold) + "," + fmt_double(p.value) + "\n";
  out.fmr_vs_tau1_csv = c1;

  std::string pp = "id,scene,inlier_ratio,matched,registered,rte_m,rre_deg,success\n";
  for (const PairEval& ev : out.pairs) {
    pp += std::to_string(ev.id) + "," + std::to_string(ev.scene) + "," +
          fmt_double(ev.inlier_ratio) + "," + std::to_string(ev.matched) + "," +
          std::to_string(ev.registered) + "," + fmt_double(ev.rte_m) + "," +
          fmt_double(ev.rre_deg) + "," + std::to_string(ev.success) + "\n";
  }
  out.per_pair_csv = pp;
  return out;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& checkpoint,
                 const std::string& dataset_dir, const std::string& out_dir) {
  fs::create_directories(out_dir);
  Model model = load_checkpoint(checkpoint);
  std::vector<DatasetEntry> dataset = load_dataset(dataset_dir);
  EvaluateOutput out = evaluate_dataset(model, dataset, cfg);
  atomic_write(out_dir + "/metrics.json", out.report.dump(2) + "\n");
  atomic_write(out_dir + "/per_pair.csv", out.per_pair_csv);
  atomic_write(out_dir + "/fmr_vs_tau2.csv", out.fmr_vs_tau2_csv);
  atomic_write(out_dir + "/fmr_vs_tau1.csv", out.fmr_vs_tau1_csv);
  return 0;
}

int cmd_register_pair(const RunConfig& cfg, const std::string& checkpoint,
                      const std::string& dataset_dir, int pair_index,
                      const std::string& out_json) {
  Model model = load_checkpoint(checkpoint);
  std::vector<DatasetEntry> dataset = load_dataset(dataset_dir);
  require(pair_index >= 0 && pair_index < static_cast<int>(dataset.size()),
          ErrorCategory::contract, "pair index ", pair_index, " out of range");
  const DatasetEntry& entry = dataset[pair_index];

  DescriptorField src = model.extract_descriptors(
      entry.pair.src_cloud, model.cfg.with_fusion ? &entry.pair.src_image : nullptr);
  DescriptorField dst = model.extract_descriptors(
      entry.pair.dst_cloud, model.cfg.with_fusion ? &entry.pair.dst_image : nullptr);
  CorrespondenceSet matches =
      match_descriptors(src, dst, cfg.metrics.mutual_only);

  RansacParams params;
  params.iterations = cfg.ransac_iterations;
  params.inlier_dist = cfg.ransac_inlier_dist;
  params.seed = derive_seed(cfg.seed, 0x2a5ac + entry.id);
  RansacResult res =
      ransac_register(matches, src.points_xyz, dst.points_xyz, params);

  json j;
  j["success"] = res.success;
  j["iterations"] = res.iterations;
  j["inliers"] = res.inliers.size();
  j["correspondences"] = matches.size();
  if (res.success) {
    json t = transform_to_json(res.transform);
    j["r"] = t["r"];
    j["t"] = t["t"];
    j["best_iteration"] = res.best_iteration;
    TransformErrors te = transform_errors(res.transform, entry.pair.gt);
    j["rte_m"] = te.rte_m;
    j["rre_deg"] = te.rre_deg;
  }
  atomic_write(out_json, j.dump(2) + "\n");
  require(res.success, ErrorCategory::registration,
          "registration failed: no model with enough inliers");
  return 0;
}

int cmd_interpret(const RunConfig& cfg, const std::string& checkpoint,
                  const std::string& dataset_dir, int pair_index,
                  int64_t point_index, const std::string& out_dir) {
  (void)cfg;
  fs::create_directories(out_dir);
  Model model = load_checkpoint(checkpoint);
  std::vector<DatasetEntry> dataset = load_dataset(dataset_dir);
  require(pair_index >= 0 && pair_index < static_cast<int>(dataset.size()),
          ErrorCategory::contract, "pair index ", pair_index, " out of range");
  const PointCloud& cloud = dataset[pair_index].pair.src_cloud;
  const Image& image = dataset[pair_index].pair.src_image;
  ForwardPass fp =
      model.forward(cloud, model.cfg.with_fusion ? &image : nullptr);
  HeatMap map = descriptor_activation_map(model, fp, cloud, point_index);
  export_heatmap(out_dir + "/heatmap.ply", out_dir + "/heatmap.json", map, cloud);

  // Attention-weight inspection dump: rows = bottleneck points, columns =
  // image grid cells.
  if (fp.art.has_fusion) {
    const Tensor& w = fp.tape->value(fp.art.fusion.weights);
    std::string csv;
    for (int64_t i = 0; i < w.shape[0]; ++i) {
      for (int64_t j = 0; j < w.shape[1]; ++j) {
        if (j) csv += ",";
        csv += fmt_double(w.at(i, j));
      }
      csv += "\n";
    }
    atomic_write(out_dir + "/attention_weights.csv", csv);
  }
  return 0;
}

int cmd_gradcheck(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  json rep;
  double worst = 0.0;
  auto record = [&](const std::string& name, double value) {
    rep["checks"][name] = value;
    worst = std::max(worst, value);
  };

  Rng rng(derive_seed(cfg.seed, 0x9cad));
  {
    Tensor a = Tensor::uniform({4, 3}, rng, -1, 1);
    Tensor b = Tensor::uniform({3, 5}, rng, -1, 1);
    record("matmul", finite_diff_check([&](Tape& t, Var v) {
                       return t.matmul(v, t.leaf(b));
                     }, a).max_rel_error);
    record("row_softmax", finite_diff_check([](Tape& t, Var v) {
                            return t.row_softmax(v, 1.7);
                          }, a).max_rel_error);
    Tensor off = a;
    for (auto& v : off.values) v += (v >= 0 ? 0.05 : -0.05);
    record("relu", finite_diff_check([](Tape& t, Var v) { return t.relu(v); },
                                     off).max_rel_error);
    Parameter w("w", Tensor::uniform({3, 4}, rng, -1, 1));
    Parameter bias("b", Tensor::uniform({4}, rng, -0.2, 0.2));
    record("linear", finite_diff_check_param([&](Tape& t) {
                       return t.linear(t.leaf(a), w, bias);
                     }, w).max_rel_error);
  }
  {
    SparseConvLayer conv = SparseConvLayer::create("k", 2, 3, 3, 2, false, rng);
    std::vector<Coord> coords;
    for (int i = 0; i < 12; ++i)
      coords.push_back({static_cast<int32_t>(rng.uniform_int(5)),
                        static_cast<int32_t>(rng.uniform_int(5)),
                        static_cast<int32_t>(rng.uniform_int(5))});
    std::sort(coords.begin(), coords.end());
    coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    Tensor feats =
        Tensor::uniform({static_cast<int64_t>(coords.size()), 2}, rng, -1, 1);
    auto build = [&](Tape& t) {
      SparseTensor in;
      in.coords = coords;
      in.feats = t.leaf(feats);
      in.stride = 1;
      in.voxel_size = 0.1;
      return sparse_conv(t, in, conv).feats;
    };
    record("sparse_conv_kernel",
           finite_diff_check_param(build, conv.kernel).max_rel_error);

    SparseConvLayer up = SparseConvLayer::create("u", 3, 2, 3, 2, true, rng);
    std::vector<Coord> coarse = downsample_coords(coords, 2);
    Tensor cf =
        Tensor::uniform({static_cast<int64_t>(coarse.size()), 3}, rng, -1, 1);
    auto build_t = [&](Tape& t) {
      SparseTensor in;
      in.coords = coarse;
      in.feats = t.leaf(cf);
      in.stride = 2;
      in.voxel_size = 0.1;
      return sparse_transpose_conv(t, in, up, coords).feats;
    };
    record("sparse_transpose_kernel",
           finite_diff_check_param(build_t, up.kernel).max_rel_error);
  }
  {
    Parameter k2("k2", Tensor::uniform({3, 3, 2, 3}, rng, -0.7, 0.7));
    Tensor img = Tensor::uniform({6, 6, 2}, rng, 0, 1);
    record("conv2d", finite_diff_check_param([&](Tape& t) {
                       return conv2d(t, t.leaf(img), k2, 2);
                     }, k2).max_rel_error);
  }
  {
    FusionConfig fcfg;
    fcfg.c_t = 3;
    AttentionFusion fusion(4, 3, fcfg, "f", rng);
    Tensor f_pe = Tensor::uniform({5, 4}, rng, -1, 1);
    Tensor f_ie = Tensor::uniform({4, 3}, rng, -1, 1);
    record("attention_fusion", finite_diff_check([&](Tape& t, Var v) {
                                 return fusion.fuse(t, v, t.leaf(f_ie)).fused;
                               }, f_pe).max_rel_error);
  }
  {
    Tensor da = Tensor::uniform({6, 4}, rng, -1, 1);
    Tensor db = Tensor::uniform({6, 4}, rng, -1, 1);
    TrainConfig tc;
    tc.positive_margin = 0.05;
    tc.negative_margin = 1.2;
    std::vector<PosPair> pos = {{0, 0}, {2, 4}, {5, 1}};
    record("hardest_contrastive_loss",
           finite_diff_check([&](Tape& t, Var v) {
             return hardest_contrastive_loss(t, v, t.leaf(db), pos, tc);
           }, da).max_rel_error);
  }
  double lemma_disc;
  bool locality;
  {
    SparseConvLayer layer = SparseConvLayer::create("l", 3, 3, 1, 1, false, rng);
    Tensor a = Tensor::uniform({10, 3}, rng, -1, 1);
    Tensor w = Tensor::uniform({10, 3}, rng, -1, 1);
    Lemma1Report lr = verify_lemma1(
        layer, a, [&](Tape& t, Var z) { return t.sum(t.mul(z, t.leaf(w))); });
    lemma_disc = lr.max_discrepancy;
    locality = lr.column_locality_ok;
    rep["lemma1_discrepancy"] = lr.max_discrepancy;
    rep["lemma1_column_locality"] = lr.column_locality_ok;
  }
  rep["max_rel_error"] = worst;
  bool pass = worst < 1e-5 && lemma_disc < 1e-10 && locality;
  rep["pass"] = pass;
  atomic_write(out_dir + "/gradcheck.json", rep.dump(2) + "\n");
  std::printf("gradcheck: max_rel_error=%.3g lemma1=%.3g pass=%s\n", worst,
              lemma_disc, pass ? "true" : "false");
  require(pass, ErrorCategory::numeric, "gradient check failed");
  return 0;
}

}  // namespace imf
