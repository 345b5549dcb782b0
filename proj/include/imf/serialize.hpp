#pragma once

#include <json.hpp>
#include <string>

#include "imf/network.hpp"

namespace imf {

nlohmann::json network_config_to_json(const NetworkConfig& cfg);
// Rejects unknown keys; reports every violation at once.
NetworkConfig network_config_from_json(const nlohmann::json& j);

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Versioned binary container: magic, version, config JSON, then named
// parameter blobs as 64-bit little-endian doubles.
void save_checkpoint(const std::string& path, Model& model);
Model load_checkpoint(const std::string& path);
// Refuses to load when the stored config differs from the model's.
void load_checkpoint_into(const std::string& path, Model& model);

// Descriptor container: header JSON (rows, dim, voxel_size), descriptor
// block, voxel coordinates, centroids.
void save_descriptor_field(const std::string& path, const DescriptorField& f);
DescriptorField load_descriptor_field(const std::string& path);

}  // namespace imf
