#include "imf/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "imf/ply_io.hpp"

static_assert(std::endian::native == std::endian::little,
              "serialized containers assume a little-endian host");

namespace imf {

using nlohmann::json;

namespace {

constexpr char kCheckpointMagic[8] = {'I', 'M', 'F', 'N', 'E', 'T', 'C', '1'};
constexpr char kDescriptorMagic[8] = {'I', 'M', 'F', 'N', 'E', 'T', 'D', '1'};
constexpr uint32_t kVersion = 1;

void collect_unknown_keys(const json& j,
                          const std::vector<std::string>& allowed,
                          const std::string& scope,
                          std::vector<std::string>& errs) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      errs.push_back("unknown key '" + scope + it.key() + "'");
  }
}

[[noreturn]] void fail_config(const std::vector<std::string>& errs) {
  std::string all;
  for (const auto& e : errs) all += (all.empty() ? "" : "; ") + e;
  raise(ErrorCategory::config, "config validation failed: ", all);
}

struct Writer {
  std::ostringstream out;
  void bytes(const void* p, size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  void u32(uint32_t v) { bytes(&v, 4); }
  void u64(uint64_t v) { bytes(&v, 8); }
  void i64(int64_t v) { bytes(&v, 8); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void doubles(const std::vector<double>& v) { bytes(v.data(), v.size() * 8); }
};

struct Reader {
  std::string data;
  std::string path;
  size_t pos = 0;
  void bytes(void* p, size_t n) {
    if (pos + n > data.size())
      raise(ErrorCategory::parse, path, ": truncated container at byte ", pos);
    std::memcpy(p, data.data() + pos, n);
    pos += n;
  }
  uint32_t u32() {
    uint32_t v;
    bytes(&v, 4);
    return v;
  }
  uint64_t u64() {
    uint64_t v;
    bytes(&v, 8);
    return v;
  }
  int64_t i64() {
    int64_t v;
    bytes(&v, 8);
    return v;
  }
  std::string str() {
    uint64_t n = u64();
    if (pos + n > data.size())
      raise(ErrorCategory::parse, path, ": truncated string at byte ", pos);
    std::string s = data.substr(pos, n);
    pos += n;
    return s;
  }
  std::vector<double> doubles(size_t n) {
    std::vector<double> v(n);
    bytes(v.data(), n * 8);
    return v;
  }
};

Reader open_container(const std::string& path, const char magic[8]) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCategory::io, "cannot open ", path);
  std::ostringstream ss;
  ss << in.rdbuf();
  Reader r{ss.str(), path, 0};
  char m[8];
  r.bytes(m, 8);
  if (std::memcmp(m, magic, 8) != 0)
    raise(ErrorCategory::parse, path, ": bad magic at byte 0");
  uint32_t version = r.u32();
  if (version != kVersion)
    raise(ErrorCategory::parse, path, ": unsupported version ", version);
  return r;
}

}  // namespace

json network_config_to_json(const NetworkConfig& cfg) {
  json j;
  j["encoder_channels"] = cfg.encoder_channels;
  j["decoder_channels"] = cfg.decoder_channels;
  j["image_encoder_channels"] = cfg.image_encoder.channels;
  j["image_feature_dim"] = cfg.image_encoder.out_dim;
  j["descriptor_dim"] = cfg.descriptor_dim;
  j["voxel_size"] = cfg.voxel_size;
  j["normalize_output"] = cfg.normalize_output;
  j["with_fusion"] = cfg.with_fusion;
  j["decoder_concat_fusion"] = cfg.decoder_concat_fusion;
  j["kernel_extent"] = cfg.kernel_extent;
  j["fusion"] = {
      {"c_t", cfg.fusion.c_t},
      {"self_attention_layers", cfg.fusion.self_attention_layers},
      {"query_source",
       cfg.fusion.query_source == QuerySource::image ? "image" : "points"},
      {"positions",
       cfg.fusion.positions == FusionPositions::three ? "three" : "single"}};
  return j;
}

NetworkConfig network_config_from_json(const json& j) {
  std::vector<std::string> errs;
  collect_unknown_keys(
      j,
      {"encoder_channels", "decoder_channels", "image_encoder_channels",
       "image_feature_dim", "descriptor_dim", "voxel_size", "normalize_output",
       "with_fusion", "decoder_concat_fusion", "kernel_extent", "fusion"},
      "network.", errs);
  NetworkConfig cfg;
  try {
    if (j.contains("encoder_channels"))
      cfg.encoder_channels = j["encoder_channels"];
    if (j.contains("decoder_channels"))
      cfg.decoder_channels = j["decoder_channels"];
    if (j.contains("image_encoder_channels"))
      cfg.image_encoder.channels = j["image_encoder_channels"];
    if (j.contains("image_feature_dim"))
      cfg.image_encoder.out_dim = j["image_feature_dim"];
    if (j.contains("descriptor_dim")) cfg.descriptor_dim = j["descriptor_dim"];
    if (j.contains("voxel_size")) cfg.voxel_size = j["voxel_size"];
    if (j.contains("normalize_output"))
      cfg.normalize_output = j["normalize_output"];
    if (j.contains("with_fusion")) cfg.with_fusion = j["with_fusion"];
    if (j.contains("decoder_concat_fusion"))
      cfg.decoder_concat_fusion = j["decoder_concat_fusion"];
    if (j.contains("kernel_extent")) cfg.kernel_extent = j["kernel_extent"];
    if (j.contains("fusion")) {
      const json& f = j["fusion"];
      collect_unknown_keys(
          f, {"c_t", "self_attention_layers", "query_source", "positions"},
          "network.fusion.", errs);
      if (f.contains("c_t")) cfg.fusion.c_t = f["c_t"];
      if (f.contains("self_attention_layers"))
        cfg.fusion.self_attention_layers = f["self_attention_layers"];
      if (f.contains("query_source")) {
        std::string q = f["query_source"];
        if (q == "image")
          cfg.fusion.query_source = QuerySource::image;
        else if (q == "points")
          cfg.fusion.query_source = QuerySource::points;
        else
          errs.push_back("network.fusion.query_source must be points|image");
      }
      if (f.contains("positions")) {
        std::string p = f["positions"];
        if (p == "three")
          cfg.fusion.positions = FusionPositions::three;
        else if (p == "single")
          cfg.fusion.positions = FusionPositions::single;
        else
          errs.push_back("network.fusion.positions must be single|three");
      }
    }
  } catch (const json::exception& e) {
    errs.push_back(std::string("network config type error: ") + e.what());
  }
  if (!errs.empty()) fail_config(errs);
  cfg.validate();
  return cfg;
}

json train_config_to_json(const TrainConfig& cfg) {
  return json{{"positive_margin", cfg.positive_margin},
              {"negative_margin", cfg.negative_margin},
              {"learning_rate", cfg.learning_rate},
              {"momentum", cfg.momentum},
              {"epochs", cfg.epochs},
              {"pairs_per_epoch", cfg.pairs_per_epoch},
              {"anchors_per_pair", cfg.anchors_per_pair},
              {"pos_match_radius", cfg.pos_match_radius},
              {"neg_exclude_radius_m", cfg.neg_exclude_radius_m}};
}

TrainConfig train_config_from_json(const json& j) {
  std::vector<std::string> errs;
  collect_unknown_keys(j,
                       {"positive_margin", "negative_margin", "learning_rate",
                        "momentum", "epochs", "pairs_per_epoch",
                        "anchors_per_pair", "pos_match_radius",
                        "neg_exclude_radius_m"},
                       "train.", errs);
  TrainConfig cfg;
  try {
    if (j.contains("positive_margin")) cfg.positive_margin = j["positive_margin"];
    if (j.contains("negative_margin")) cfg.negative_margin = j["negative_margin"];
    if (j.contains("learning_rate")) cfg.learning_rate = j["learning_rate"];
    if (j.contains("momentum")) cfg.momentum = j["momentum"];
    if (j.contains("epochs")) cfg.epochs = j["epochs"];
    if (j.contains("pairs_per_epoch")) cfg.pairs_per_epoch = j["pairs_per_epoch"];
    if (j.contains("anchors_per_pair"))
      cfg.anchors_per_pair = j["anchors_per_pair"];
    if (j.contains("pos_match_radius"))
      cfg.pos_match_radius = j["pos_match_radius"];
    if (j.contains("neg_exclude_radius_m"))
      cfg.neg_exclude_radius_m = j["neg_exclude_radius_m"];
  } catch (const json::exception& e) {
    errs.push_back(std::string("train config type error: ") + e.what());
  }
  if (!errs.empty()) fail_config(errs);
  cfg.validate();
  return cfg;
}

void save_checkpoint(const std::string& path, Model& model) {
  Writer w;
  w.bytes(kCheckpointMagic, 8);
  w.u32(kVersion);
  json header;
  header["config"] = network_config_to_json(model.cfg);
  header["seed"] = model.init_seed;
  w.str(header.dump());
  auto params = model.parameters();
  w.u32(static_cast<uint32_t>(params.size()));
  for (Parameter* p : params) {
    w.str(p->name);
    w.u32(static_cast<uint32_t>(p->tensor.shape.size()));
    for (int64_t d : p->tensor.shape) w.i64(d);
    w.doubles(p->tensor.values);
  }
  atomic_write(path, w.out.str());
}

namespace {

void load_params(Reader& r, Model& model) {
  uint32_t n = r.u32();
  auto params = model.parameters();
  require(n == params.size(), ErrorCategory::parse, r.path,
          ": parameter count mismatch (", n, " vs ", params.size(), ")");
  for (Parameter* p : params) {
    std::string name = r.str();
    require(name == p->name, ErrorCategory::parse, r.path,
            ": parameter name mismatch '", name, "' vs '", p->name, "'");
    uint32_t ndim = r.u32();
    std::vector<int64_t> dims(ndim);
    for (auto& d : dims) d = r.i64();
    require(dims == p->tensor.shape, ErrorCategory::parse, r.path,
            ": parameter shape mismatch for '", name, "'");
    p->tensor.values = r.doubles(p->tensor.values.size());
  }
}

}  // namespace

Model load_checkpoint(const std::string& path) {
  Reader r = open_container(path, kCheckpointMagic);
  json header = json::parse(r.str(), nullptr, false);
  require(!header.is_discarded(), ErrorCategory::parse, path,
          ": bad header JSON");
  NetworkConfig cfg = network_config_from_json(header["config"]);
  Model model(cfg, header.value("seed", 0ULL));
  load_params(r, model);
  return model;
}

void load_checkpoint_into(const std::string& path, Model& model) {
  Reader r = open_container(path, kCheckpointMagic);
  json header = json::parse(r.str(), nullptr, false);
  require(!header.is_discarded(), ErrorCategory::parse, path,
          ": bad header JSON");
  require(header["config"] == network_config_to_json(model.cfg),
          ErrorCategory::config,
          "checkpoint config does not match the model config");
  load_params(r, model);
}

void save_descriptor_field(const std::string& path, const DescriptorField& f) {
  Writer w;
  w.bytes(kDescriptorMagic, 8);
  w.u32(kVersion);
  json header;
  header["rows"] = f.size();
  header["dim"] = f.descriptors.shape.empty() ? 0 : f.descriptors.shape[1];
  header["voxel_size"] = f.voxel_size;
  w.str(header.dump());
  w.doubles(f.descriptors.values);
  for (const Coord& c : f.coords) {
    for (int k = 0; k < 3; ++k) {
      int32_t v = c[k];
      w.bytes(&v, 4);
    }
  }
  for (const Vec3& p : f.points_xyz) w.bytes(p.data(), 24);
  atomic_write(path, w.out.str());
}

DescriptorField load_descriptor_field(const std::string& path) {
  Reader r = open_container(path, kDescriptorMagic);
  json header = json::parse(r.str(), nullptr, false);
  require(!header.is_discarded(), ErrorCategory::parse, path,
          ": bad header JSON");
  int64_t rows = header["rows"];
  int64_t dim = header["dim"];
  DescriptorField f;
  f.voxel_size = header["voxel_size"];
  f.descriptors = Tensor({rows, dim}, r.doubles(rows * dim));
  f.coords.resize(rows);
  for (auto& c : f.coords)
    for (int k = 0; k < 3; ++k) r.bytes(&c[k], 4);
  f.points_xyz.resize(rows);
  for (auto& p : f.points_xyz) r.bytes(p.data(), 24);
  return f;
}

}  // namespace imf
