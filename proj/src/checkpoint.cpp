// SPDX-License-Identifier: Apache-2.0
#include "harllm/checkpoint.hpp"

#include <fstream>
#include <set>

#include "harllm/tensor_archive.hpp"

namespace harllm {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const char* what) {
    if (!j.is_object()) throw ConfigError(std::string(what) + ": expected an object");
    std::set<std::string> known(keys.begin(), keys.end());
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) throw ConfigError(std::string(what) + ": unknown key '" + it.key() + "'");
}

template <typename V>
void read(const json& j, const char* key, V& out, const char* what) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<V>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string(what) + "." + key + ": " + e.what());
    }
}

} // namespace

json to_json(const FrontendConfig& c) {
    return {{"frame_length", c.frame_length}, {"d_llm", c.d_llm},
            {"kernel", c.kernel},             {"encoder_channels", c.encoder_channels},
            {"branch_channels", c.branch_channels}, {"layer_norm_eps", c.layer_norm_eps}};
}

json to_json(const BackboneConfig& c) {
    return {{"n_layers", c.n_layers},           {"d_model", c.d_model}, {"n_heads", c.n_heads},
            {"d_ff", c.d_ff},                   {"max_positions", c.max_positions}, {"causal", c.causal},
            {"vocab_size", c.vocab_size},       {"layer_norm_eps", c.layer_norm_eps}};
}

json to_json(const LoraConfig& c) {
    return {{"rank", c.rank}, {"alpha", c.alpha}, {"dropout", c.dropout}, {"targets", c.targets}};
}

json to_json(const ModelConfig& c) {
    return {{"window", c.window},
            {"channels", c.channels},
            {"frontend", to_json(c.frontend)},
            {"backbone", to_json(c.backbone)},
            {"lora", to_json(c.lora)},
            {"labels", c.labels}};
}

json to_json(const data::NormStats& s) {
    return {{"mode", s.mode == data::NormMode::dataset ? "dataset" : "window"},
            {"mean", s.mean},
            {"std", s.std},
            {"epsilon", data::kNormEpsilon}};
}

FrontendConfig frontend_config_from_json(const json& j) {
    const char* w = "frontend";
    reject_unknown(j, {"frame_length", "d_llm", "kernel", "encoder_channels", "branch_channels", "layer_norm_eps"}, w);
    FrontendConfig c;
    read(j, "frame_length", c.frame_length, w);
    read(j, "d_llm", c.d_llm, w);
    read(j, "kernel", c.kernel, w);
    read(j, "encoder_channels", c.encoder_channels, w);
    read(j, "branch_channels", c.branch_channels, w);
    read(j, "layer_norm_eps", c.layer_norm_eps, w);
    return c;
}

BackboneConfig backbone_config_from_json(const json& j) {
    const char* w = "backbone";
    reject_unknown(j,
                   {"n_layers", "d_model", "n_heads", "d_ff", "max_positions", "causal", "vocab_size", "layer_norm_eps"},
                   w);
    BackboneConfig c;
    read(j, "n_layers", c.n_layers, w);
    read(j, "d_model", c.d_model, w);
    read(j, "n_heads", c.n_heads, w);
    read(j, "d_ff", c.d_ff, w);
    read(j, "max_positions", c.max_positions, w);
    read(j, "causal", c.causal, w);
    read(j, "vocab_size", c.vocab_size, w);
    read(j, "layer_norm_eps", c.layer_norm_eps, w);
    return c;
}

LoraConfig lora_config_from_json(const json& j) {
    const char* w = "lora";
    reject_unknown(j, {"rank", "alpha", "dropout", "targets"}, w);
    LoraConfig c;
    read(j, "rank", c.rank, w);
    read(j, "alpha", c.alpha, w);
    read(j, "dropout", c.dropout, w);
    read(j, "targets", c.targets, w);
    return c;
}

ModelConfig model_config_from_json(const json& j) {
    const char* w = "model";
    reject_unknown(j, {"window", "channels", "frontend", "backbone", "lora", "labels"}, w);
    ModelConfig c;
    read(j, "window", c.window, w);
    read(j, "channels", c.channels, w);
    read(j, "labels", c.labels, w);
    if (j.contains("frontend")) c.frontend = frontend_config_from_json(j.at("frontend"));
    if (j.contains("backbone")) c.backbone = backbone_config_from_json(j.at("backbone"));
    if (j.contains("lora")) c.lora = lora_config_from_json(j.at("lora"));
    return c;
}

data::NormStats norm_stats_from_json(const json& j) {
    data::NormStats s;
    const std::string mode = j.at("mode").get<std::string>();
    if (mode != "dataset" && mode != "window") throw ConfigError("normalization: unknown mode '" + mode + "'");
    s.mode = mode == "window" ? data::NormMode::window : data::NormMode::dataset;
    s.mean = j.at("mean").get<std::array<double, data::kChannels>>();
    s.std = j.at("std").get<std::array<double, data::kChannels>>();
    return s;
}

std::filesystem::path checkpoint_sidecar(const std::filesystem::path& file) {
    std::filesystem::path p = file;
    return p.replace_extension(".json");
}

void save_checkpoint(const std::filesystem::path& file, HarllmModel<float>& model, const data::NormStats& norm) {
    TensorMap tensors;
    for (auto* p : model.all_parameters()) tensors[p->name] = {p->value.shape(), p->value.storage()};
    save_tensor_archive(file, tensors, {{"format", "harllm-checkpoint"}});
    const json sidecar = {{"format", "harllm-checkpoint"},
                          {"tensors", file.filename().string()},
                          {"model", to_json(model.config())},
                          {"normalization", to_json(norm)}};
    std::ofstream out(checkpoint_sidecar(file), std::ios::binary);
    out << sidecar.dump(2) << "\n";
    if (!out) throw CheckpointError("cannot write " + checkpoint_sidecar(file).string());
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
    std::map<std::string, std::string> meta;
    TensorMap tensors = load_tensor_archive(file, &meta);
    if (meta["format"] != "harllm-checkpoint") throw CheckpointError(file.string() + ": not a model checkpoint");
    const auto sidecar_path = checkpoint_sidecar(file);
    std::ifstream in(sidecar_path);
    if (!in) throw CheckpointError(file.string() + ": missing configuration sidecar " + sidecar_path.string());
    Checkpoint ck;
    ModelConfig cfg;
    try {
        const json sidecar = json::parse(in);
        cfg = model_config_from_json(sidecar.at("model"));
        ck.norm = norm_stats_from_json(sidecar.at("normalization"));
    } catch (const std::exception& e) {
        throw CheckpointError(sidecar_path.string() + ": " + e.what());
    }
    cfg.validate();
    ck.model = std::make_unique<HarllmModel<float>>(cfg, 0);
    std::set<std::string> expected;
    for (auto* p : ck.model->all_parameters()) {
        expected.insert(p->name);
        auto it = tensors.find(p->name);
        if (it == tensors.end()) throw CheckpointError(file.string() + ": missing tensor '" + p->name + "'");
        if (it->second.shape != p->value.shape())
            throw CheckpointError(file.string() + ": tensor '" + p->name + "' has shape " +
                                  shape_str(it->second.shape) + ", expected " + shape_str(p->value.shape()));
        p->value = Tensor<float>(it->second.shape, std::move(it->second.data));
    }
    for (const auto& [name, t] : tensors)
        if (!expected.count(name)) throw CheckpointError(file.string() + ": unexpected tensor '" + name + "'");
    return ck;
}

} // namespace harllm
