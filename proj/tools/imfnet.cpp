#include <CLI11.hpp>
#include <cstdio>

#include "imf/commands.hpp"
#include "imf/parallel.hpp"

using namespace imf;

int main(int argc, char** argv) {
  CLI::App app{"IMFNet multimodal point-cloud descriptor pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out = "out";
  std::vector<std::string> overrides;
  uint64_t seed = 0;
  bool seed_given = false;
  int threads = 0;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--out", out, "output directory or file");
  app.add_option("--set", overrides, "override config values (key.path=value)")
      ->take_all();
  app.add_option("--seed", seed, "master seed")->each([&](std::string) {
    seed_given = true;
  });
  app.add_option("--threads", threads,
                 "worker threads (default: IMFNET_THREADS or OpenMP default)");

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");

  auto* train_cmd = app.add_subcommand("train", "train a model on a dataset");
  std::string dataset_dir;
  train_cmd->add_option("dataset", dataset_dir, "dataset directory")->required();

  auto* extract = app.add_subcommand("extract", "extract descriptors");
  std::string checkpoint, cloud_ply, image_ppm;
  extract->add_option("checkpoint", checkpoint, "model checkpoint")->required();
  extract->add_option("cloud", cloud_ply, "point cloud (PLY)")->required();
  extract->add_option("--image", image_ppm, "paired image (PPM)");

  auto* reg = app.add_subcommand("register", "register one dataset pair");
  std::string reg_checkpoint, reg_dataset;
  int pair_index = 0;
  reg->add_option("checkpoint", reg_checkpoint)->required();
  reg->add_option("dataset", reg_dataset)->required();
  reg->add_option("pair", pair_index, "pair index")->required();

  auto* evaluate = app.add_subcommand("evaluate", "run the evaluation protocol");
  std::string eval_checkpoint, eval_dataset;
  evaluate->add_option("checkpoint", eval_checkpoint)->required();
  evaluate->add_option("dataset", eval_dataset)->required();

  auto* interpret = app.add_subcommand("interpret", "DAM heat map for a point");
  std::string int_checkpoint, int_dataset;
  int int_pair = 0;
  int64_t point_index = 0;
  interpret->add_option("checkpoint", int_checkpoint)->required();
  interpret->add_option("dataset", int_dataset)->required();
  interpret->add_option("pair", int_pair)->required();
  interpret->add_option("point", point_index, "original point index")->required();

  auto* gradcheck =
      app.add_subcommand("gradcheck", "gradient and Lemma-1 verification");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = load_run_config(config_path, overrides);
    if (seed_given) cfg.seed = seed;
    if (threads > 0) cfg.threads = threads;
    if (cfg.threads <= 0) cfg.threads = threads_from_env();
    set_threads(cfg.threads);

    if (*synth) return cmd_synth(cfg, out);
    if (*train_cmd) return cmd_train(cfg, dataset_dir, out);
    if (*extract) return cmd_extract(cfg, checkpoint, cloud_ply, image_ppm, out);
    if (*reg) return cmd_register_pair(cfg, reg_checkpoint, reg_dataset,
                                       pair_index, out);
    if (*evaluate) return cmd_evaluate(cfg, eval_checkpoint, eval_dataset, out);
    if (*interpret)
      return cmd_interpret(cfg, int_checkpoint, int_dataset, int_pair,
                           point_index, out);
    if (*gradcheck) return cmd_gradcheck(cfg, out);
  } catch (const Error& e) {
    std::fprintf(stderr, "error (%s): %s\n", category_name(e.category),
                 e.what());
    return static_cast<int>(e.category);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
