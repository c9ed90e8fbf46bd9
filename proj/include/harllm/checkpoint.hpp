// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <memory>

#include "harllm/data.hpp"
#include "harllm/model.hpp"
#include "json.hpp"

namespace harllm {

nlohmann::json to_json(const FrontendConfig& cfg);
nlohmann::json to_json(const BackboneConfig& cfg);
nlohmann::json to_json(const LoraConfig& cfg);
nlohmann::json to_json(const ModelConfig& cfg);
nlohmann::json to_json(const data::NormStats& stats);

/// Missing keys keep their defaults; unknown keys throw ConfigError.
FrontendConfig frontend_config_from_json(const nlohmann::json& j);
BackboneConfig backbone_config_from_json(const nlohmann::json& j);
LoraConfig lora_config_from_json(const nlohmann::json& j);
ModelConfig model_config_from_json(const nlohmann::json& j);
data::NormStats norm_stats_from_json(const nlohmann::json& j);

struct Checkpoint {
    std::unique_ptr<HarllmModel<float>> model;
    data::NormStats norm;
};

/// `<file>` minus its extension plus ".json".
std::filesystem::path checkpoint_sidecar(const std::filesystem::path& file);

/// Every parameter (frozen and trainable) goes to the tensor archive; the model
/// configuration, label vocabulary and normalization statistics go to a JSON
/// sidecar next to it.
void save_checkpoint(const std::filesystem::path& file, HarllmModel<float>& model, const data::NormStats& norm);

/// Rebuilds the model from the stored configuration and checks every tensor
/// name and shape; a mismatch throws CheckpointError naming the tensor.
Checkpoint load_checkpoint(const std::filesystem::path& file);

} // namespace harllm
