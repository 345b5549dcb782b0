#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "imf/commands.hpp"
#include "support/schema_check.hpp"

using namespace imf;
namespace fs = std::filesystem;

namespace {

std::string schema_dir() { return std::string(IMF_SOURCE_DIR) + "/schemas"; }

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) {
    path = fs::temp_directory_path() / name;
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
  std::string sub(const std::string& s) const { return (path / s).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

void check_schema(const std::string& schema_file, const nlohmann::json& value) {
  nlohmann::json schema = load_json_file(schema_dir() + "/" + schema_file);
  std::string err;
  bool ok = schema_validate(schema, value, err);
  INFO(err);
  CHECK(ok);
}

// Small everything: tiny net, tiny scene, quick commands.
RunConfig tiny_run_config() {
  RunConfig cfg;
  cfg.seed = 7;
  cfg.network.encoder_channels = {4, 6, 6, 8};
  cfg.network.decoder_channels = {6, 6, 6, 6};
  cfg.network.image_encoder = ImageEncoderConfig{{3, 4, 4}, 4};
  cfg.network.descriptor_dim = 6;
  cfg.network.voxel_size = 0.08;
  cfg.network.fusion.c_t = 4;
  cfg.train.epochs = 2;
  cfg.train.anchors_per_pair = 32;
  cfg.train.learning_rate = 0.02;
  cfg.scene.planes = 2;
  cfg.scene.boxes = 1;
  cfg.scene.spheres = 1;
  cfg.scene.points_per_primitive = 150;
  cfg.scene.noise_sigma = 0.003;
  cfg.dataset.scenes = 2;
  cfg.dataset.pairs_per_scene = 2;
  cfg.dataset.overlap_fraction = 0.6;
  cfg.dataset.image_width = 48;
  cfg.dataset.image_height = 48;
  cfg.metrics.eval_anchors = 64;
  cfg.ransac_iterations = 400;
  return cfg;
}

}  // namespace

TEST_CASE("run config round trip and unknown key rejection") {
  RunConfig cfg = tiny_run_config();
  nlohmann::json j = cfg.to_json();
  RunConfig back = RunConfig::from_json(j);
  CHECK(back.to_json() == j);

  nlohmann::json bad = j;
  bad["netwrok"] = 1;
  bad["metrics"]["tau_one"] = 0.2;
  try {
    RunConfig::from_json(bad);
    FAIL("expected config error");
  } catch (const Error& e) {
    std::string msg = e.what();
    CHECK(e.category == ErrorCategory::config);
    // both violations reported at once
    CHECK(msg.find("netwrok") != std::string::npos);
    CHECK(msg.find("tau_one") != std::string::npos);
  }
}

TEST_CASE("--set overrides reach nested keys with JSON typing") {
  nlohmann::json j = nlohmann::json::object();
  json_set_path(j, "network.descriptor_dim", "16");
  json_set_path(j, "network.fusion.query_source", "image");
  json_set_path(j, "metrics.mutual_only", "true");
  CHECK(j["network"]["descriptor_dim"] == 16);
  CHECK(j["network"]["fusion"]["query_source"] == "image");
  CHECK(j["metrics"]["mutual_only"] == true);
}

TEST_CASE("synth writes a dataset whose manifest validates") {
  TempDir dir("imf_cli_synth");
  RunConfig cfg = tiny_run_config();
  CHECK(cmd_synth(cfg, dir.str()) == 0);
  nlohmann::json manifest = load_json_file(dir.sub("manifest.json"));
  check_schema("manifest.schema.json", manifest);
  CHECK(manifest["pairs"].size() == 4);
  for (const auto& row : manifest["pairs"]) {
    CHECK(fs::exists(dir.path / row["src_ply"].get<std::string>()));
    CHECK(fs::exists(dir.path / row["dst_ppm"].get<std::string>()));
  }
  // loader reconstructs the pairs
  auto dataset = load_dataset(dir.str());
  CHECK(dataset.size() == 4);
  CHECK(dataset[0].pair.src_cloud.size() > 20);
  CHECK(dataset[0].pair.src_image.width == 48);
}

TEST_CASE("train, extract, register, evaluate, interpret chain") {
  TempDir data("imf_cli_data");
  TempDir run("imf_cli_run");
  RunConfig cfg = tiny_run_config();
  // identity pairs so an untrained model already matches perfectly
  cfg.dataset.overlap_fraction = 1.0;
  cfg.dataset.transform_magnitude_deg = 0.0;
  cfg.dataset.translation_magnitude_m = 0.0;
  REQUIRE(cmd_synth(cfg, data.str()) == 0);

  REQUIRE(cmd_train(cfg, data.str(), run.str()) == 0);
  CHECK(fs::exists(run.sub("model.ckpt")));
  CHECK(fs::exists(run.sub("loss_curve.csv")));
  nlohmann::json train_rep = load_json_file(run.sub("train_report.json"));
  check_schema("train_report.schema.json", train_rep);

  // checkpoint round trip
  Model loaded = load_checkpoint(run.sub("model.ckpt"));
  CHECK(loaded.cfg.descriptor_dim == cfg.network.descriptor_dim);
  Model fresh(cfg.network, cfg.seed);
  load_checkpoint_into(run.sub("model.ckpt"), fresh);
  auto pl = loaded.parameters();
  auto pf = fresh.parameters();
  for (size_t i = 0; i < pl.size(); ++i)
    CHECK(pl[i]->tensor.values == pf[i]->tensor.values);
  NetworkConfig other = cfg.network;
  other.descriptor_dim += 1;
  Model mismatch(other, 0);
  CHECK_THROWS_AS(load_checkpoint_into(run.sub("model.ckpt"), mismatch), Error);

  // extract descriptors for the first source cloud
  REQUIRE(cmd_extract(cfg, run.sub("model.ckpt"), data.sub("pair0000_src.ply"),
                      data.sub("pair0000_src.ppm"),
                      run.sub("desc.bin")) == 0);
  DescriptorField field = load_descriptor_field(run.sub("desc.bin"));
  CHECK(field.size() > 0);
  CHECK(field.descriptors.shape[1] == cfg.network.descriptor_dim);

  // register the identity pair: exact recovery expected
  REQUIRE(cmd_register_pair(cfg, run.sub("model.ckpt"), data.str(), 0,
                            run.sub("register.json")) == 0);
  nlohmann::json reg = load_json_file(run.sub("register.json"));
  check_schema("registration_result.schema.json", reg);
  CHECK(reg["success"] == true);
  CHECK(reg["rte_m"].get<double>() < 1e-6);
  CHECK(reg["rre_deg"].get<double>() < 1e-6);

  // evaluate twice: byte-identical outputs
  REQUIRE(cmd_evaluate(cfg, run.sub("model.ckpt"), data.str(),
                       run.sub("eval1")) == 0);
  REQUIRE(cmd_evaluate(cfg, run.sub("model.ckpt"), data.str(),
                       run.sub("eval2")) == 0);
  for (const char* f :
       {"metrics.json", "per_pair.csv", "fmr_vs_tau2.csv", "fmr_vs_tau1.csv"}) {
    CHECK(slurp(run.sub("eval1") + "/" + f) == slurp(run.sub("eval2") + "/" + f));
  }
  nlohmann::json metrics = load_json_file(run.sub("eval1") + "/metrics.json");
  check_schema("metrics_report.schema.json", metrics);
  CHECK(metrics["fmr"].get<double>() == 1.0);  // identity pairs match fully

  // interpret: heat map for a point of pair 0
  REQUIRE(cmd_interpret(cfg, run.sub("model.ckpt"), data.str(), 0, 5,
                        run.sub("interp")) == 0);
  CHECK(fs::exists(run.sub("interp") + "/heatmap.ply"));
  nlohmann::json side = load_json_file(run.sub("interp") + "/heatmap.json");
  check_schema("heatmap_sidecar.schema.json", side);
  CHECK(side["query_point"] == 5);
}

TEST_CASE("gradcheck command reports passing tolerances") {
  TempDir out("imf_cli_gradcheck");
  RunConfig cfg = tiny_run_config();
  CHECK(cmd_gradcheck(cfg, out.str()) == 0);
  nlohmann::json rep = load_json_file(out.sub("gradcheck.json"));
  check_schema("gradcheck_report.schema.json", rep);
  CHECK(rep["pass"] == true);
  CHECK(rep["max_rel_error"].get<double>() < 1e-5);
  CHECK(rep["lemma1_discrepancy"].get<double>() < 1e-10);
}

TEST_CASE("descriptor container round trip") {
  TempDir out("imf_cli_desc");
  DescriptorField f;
  Rng rng(3);
  f.descriptors = Tensor::uniform({7, 4}, rng, -1, 1);
  f.voxel_size = 0.05;
  for (int i = 0; i < 7; ++i) {
    f.coords.push_back({i, -i, 2 * i});
    f.points_xyz.push_back({0.1 * i, -0.2 * i, 0.3});
  }
  save_descriptor_field(out.sub("d.bin"), f);
  DescriptorField back = load_descriptor_field(out.sub("d.bin"));
  CHECK(back.descriptors.values == f.descriptors.values);
  CHECK(back.coords == f.coords);
  CHECK(back.points_xyz == f.points_xyz);
  CHECK(back.voxel_size == 0.05);
}
