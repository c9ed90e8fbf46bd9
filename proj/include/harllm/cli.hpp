// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "harllm/dataset_archive.hpp"
#include "harllm/model.hpp"
#include "harllm/synthetic.hpp"
#include "harllm/train.hpp"
#include "json.hpp"

namespace harllm::cli {

struct DataConfig {
    std::string source = "synthetic"; // "synthetic" or "csv"
    std::vector<std::string> paths;   // csv files or directories
    std::vector<std::string> domains; // one per path; defaults to the path stem
    std::vector<std::string> labels;  // label vocabulary for csv input
    std::map<std::string, std::string> label_map;
    double rate_hz = 0.0;     // 0 infers from timestamps
    double resample_hz = 0.0; // 0 keeps the native rate
    data::SynthSpec synthetic;
    std::size_t window = 128;
    double overlap = 0.5;
    std::string normalization = "dataset"; // or "window"
    double train = 0.72, val = 0.08, test = 0.20;
    std::string grouping = "random"; // or "subject"
    std::string prepared;            // read this archive instead of building one
};

struct ExperimentConfig {
    std::string protocol = "supervised"; // supervised | fraction_sweep | lodo
    std::uint64_t seed = 0;
    std::string out;
    DataConfig data;
    FrontendConfig frontend;
    BackboneConfig backbone;
    LoraConfig lora;
    std::string pretrained; // tensor archive with backbone weights
    TrainConfig train;
    std::vector<double> sweep_fractions = {1.0, 0.2, 0.1, 0.01};
    std::vector<std::uint64_t> sweep_seeds; // empty: seed, seed+1, seed+2
    std::string lodo_target;
    std::vector<std::string> lodo_sources; // empty: every other domain
    std::vector<double> lodo_fractions = {0.01, 0.1, 0.2, 0.5, 0.8};
    std::vector<std::uint64_t> lodo_seeds;
    bool lodo_reinit_head = false;
    std::string checkpoint;
    std::string eval_split = "test"; // train | val | test | all

    void validate() const;
    std::vector<std::uint64_t> resolved_sweep_seeds() const;
    std::vector<std::uint64_t> resolved_lodo_seeds() const;
};

/// Missing keys keep their defaults; unknown keys throw ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& cfg);

/// Builds (or reads) the prepared dataset the configuration describes. Windows
/// stay raw; `norm` holds statistics of the training split.
data::PreparedDataset prepare_dataset(const ExperimentConfig& cfg);

/// Model configuration for `cfg` over the given label vocabulary.
ModelConfig model_config(const ExperimentConfig& cfg, const std::vector<std::string>& labels);

/// Records which (domain, split) subsets each stage materialised.
struct AccessLog {
    struct Entry {
        std::string stage, domain, split;
        std::size_t windows = 0;
        std::uint64_t seed = 0;
    };
    std::vector<Entry> entries;

    std::string to_csv() const;
};

struct CellResult {
    std::string stage;
    double fraction = 1.0;
    std::uint64_t seed = 0;
    EvalReport report;
    TrainingLog log;
};

/// One supervised run on the fixed split of `ds`: training windows are a
/// stratified `fraction` of the train split.
CellResult run_supervised(const ExperimentConfig& cfg, const data::PreparedDataset& ds, double fraction,
                          std::uint64_t seed, HarllmModel<float>* trained = nullptr);

std::vector<CellResult> run_sweep(const ExperimentConfig& cfg, const data::PreparedDataset& ds);

/// Stage 1 pretrains on the source domains and evaluates zero-shot on the
/// target test split; stage 2 fine-tunes a copy per fraction. Rows are
/// ordered (seed, stage, fraction).
std::vector<CellResult> run_lodo(const ExperimentConfig& cfg, const data::PreparedDataset& ds, AccessLog& access);

/// Entry point of the `harllm` executable. Returns 0 on success, 1 on a failed
/// check or run, 2 on a usage or configuration error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace harllm::cli
