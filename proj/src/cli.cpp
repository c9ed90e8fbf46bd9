// SPDX-License-Identifier: Apache-2.0
#include "harllm/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "harllm/checkpoint.hpp"
#include "harllm/diagnostics.hpp"
#include "harllm/tensor_archive.hpp"

namespace harllm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    const std::set<std::string> known(keys.begin(), keys.end());
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

template <typename V>
void read(const json& j, const char* key, V& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<V>();
    } catch (const json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

std::string hex64(std::uint64_t v) {
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << v;
    return s.str();
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(10) << v;
    return s.str();
}

std::vector<std::uint64_t> three_from(std::uint64_t seed) { return {seed, seed + 1, seed + 2}; }

bool is_fraction(double f) { return f > 0.0 && f <= 1.0; }

} // namespace

// ---------------------------------------------------------------- config

void ExperimentConfig::validate() const {
    if (protocol != "supervised" && protocol != "fraction_sweep" && protocol != "lodo")
        throw ConfigError("protocol must be supervised, fraction_sweep or lodo, got '" + protocol + "'");
    if (data.prepared.empty()) {
        if (data.source != "synthetic" && data.source != "csv")
            throw ConfigError("data.source must be synthetic or csv, got '" + data.source + "'");
        if (data.source == "csv") {
            if (data.paths.empty()) throw ConfigError("data.paths: at least one csv path is required");
            for (const auto& p : data.paths)
                if (!fs::exists(p)) throw ConfigError("data.paths: input path does not exist: " + p);
            if (!data.domains.empty() && data.domains.size() != data.paths.size())
                throw ConfigError("data.domains: expected one name per path");
            if (data.labels.size() < 2) throw ConfigError("data.labels: csv input needs a label vocabulary");
        }
        if (data.normalization != "dataset" && data.normalization != "window")
            throw ConfigError("data.normalization must be dataset or window");
        if (data.grouping != "random" && data.grouping != "subject")
            throw ConfigError("data.split.grouping must be random or subject");
        if (data.overlap < 0.0 || data.overlap >= 1.0) throw ConfigError("data.overlap must lie in [0, 1)");
        data::SplitSpec{data.train, data.val, data.test, 1.0, seed, data::Grouping::random}.validate();
    } else if (!fs::is_directory(data.prepared)) {
        throw ConfigError("data.prepared: no prepared dataset at " + data.prepared);
    }
    if (!pretrained.empty() && !fs::exists(pretrained)) throw ConfigError("pretrained: no such file " + pretrained);
    train.validate();
    for (double f : sweep_fractions)
        if (!is_fraction(f)) throw ConfigError("sweep.fractions: " + fmt(f) + " is outside (0, 1]");
    for (double f : lodo_fractions)
        if (!is_fraction(f)) throw ConfigError("lodo.fractions: " + fmt(f) + " is outside (0, 1]");
    if (std::find(lodo_sources.begin(), lodo_sources.end(), lodo_target) != lodo_sources.end())
        throw ConfigError("lodo: target domain '" + lodo_target + "' is also listed as a source");
    if (eval_split != "train" && eval_split != "val" && eval_split != "test" && eval_split != "all")
        throw ConfigError("eval.split must be train, val, test or all");
}

std::vector<std::uint64_t> ExperimentConfig::resolved_sweep_seeds() const {
    return sweep_seeds.empty() ? three_from(seed) : sweep_seeds;
}

std::vector<std::uint64_t> ExperimentConfig::resolved_lodo_seeds() const {
    return lodo_seeds.empty() ? three_from(seed) : lodo_seeds;
}

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    reject_unknown(j,
                   {"protocol", "seed", "out", "data", "model", "pretrained", "train", "sweep", "lodo", "eval"},
                   "config");
    read(j, "protocol", c.protocol, "config");
    read(j, "seed", c.seed, "config");
    read(j, "out", c.out, "config");
    read(j, "pretrained", c.pretrained, "config");
    if (j.contains("data")) {
        const json& d = j.at("data");
        const std::string w = "data";
        reject_unknown(d,
                       {"source", "paths", "domains", "labels", "label_map", "rate_hz", "resample_hz", "synthetic",
                        "window", "overlap", "normalization", "split", "prepared"},
                       w);
        read(d, "source", c.data.source, w);
        read(d, "paths", c.data.paths, w);
        read(d, "domains", c.data.domains, w);
        read(d, "labels", c.data.labels, w);
        read(d, "label_map", c.data.label_map, w);
        read(d, "rate_hz", c.data.rate_hz, w);
        read(d, "resample_hz", c.data.resample_hz, w);
        read(d, "window", c.data.window, w);
        read(d, "overlap", c.data.overlap, w);
        read(d, "normalization", c.data.normalization, w);
        read(d, "prepared", c.data.prepared, w);
        if (d.contains("synthetic")) {
            const json& s = d.at("synthetic");
            const std::string ws = "data.synthetic";
            reject_unknown(s,
                           {"n_classes", "n_subjects", "n_domains", "rate_hz", "segment_seconds", "noise",
                            "max_rotation_deg"},
                           ws);
            read(s, "n_classes", c.data.synthetic.n_classes, ws);
            read(s, "n_subjects", c.data.synthetic.n_subjects, ws);
            read(s, "n_domains", c.data.synthetic.n_domains, ws);
            read(s, "rate_hz", c.data.synthetic.rate_hz, ws);
            read(s, "segment_seconds", c.data.synthetic.segment_seconds, ws);
            read(s, "noise", c.data.synthetic.noise, ws);
            read(s, "max_rotation_deg", c.data.synthetic.max_rotation_deg, ws);
        }
        if (d.contains("split")) {
            const json& s = d.at("split");
            const std::string ws = "data.split";
            reject_unknown(s, {"train", "val", "test", "grouping"}, ws);
            read(s, "train", c.data.train, ws);
            read(s, "val", c.data.val, ws);
            read(s, "test", c.data.test, ws);
            read(s, "grouping", c.data.grouping, ws);
        }
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        reject_unknown(m, {"frontend", "backbone", "lora"}, "model");
        if (m.contains("frontend")) c.frontend = frontend_config_from_json(m.at("frontend"));
        if (m.contains("backbone")) c.backbone = backbone_config_from_json(m.at("backbone"));
        if (m.contains("lora")) c.lora = lora_config_from_json(m.at("lora"));
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        const std::string w = "train";
        reject_unknown(t, {"batch_size", "lr", "beta1", "beta2", "eps", "max_epochs", "patience", "clip_norm"}, w);
        read(t, "batch_size", c.train.batch_size, w);
        read(t, "lr", c.train.lr, w);
        read(t, "beta1", c.train.beta1, w);
        read(t, "beta2", c.train.beta2, w);
        read(t, "eps", c.train.eps, w);
        read(t, "max_epochs", c.train.max_epochs, w);
        read(t, "patience", c.train.patience, w);
        read(t, "clip_norm", c.train.clip_norm, w);
    }
    if (j.contains("sweep")) {
        reject_unknown(j.at("sweep"), {"fractions", "seeds"}, "sweep");
        read(j.at("sweep"), "fractions", c.sweep_fractions, "sweep");
        read(j.at("sweep"), "seeds", c.sweep_seeds, "sweep");
    }
    if (j.contains("lodo")) {
        const json& l = j.at("lodo");
        reject_unknown(l, {"target", "sources", "fractions", "seeds", "reinit_head"}, "lodo");
        read(l, "target", c.lodo_target, "lodo");
        read(l, "sources", c.lodo_sources, "lodo");
        read(l, "fractions", c.lodo_fractions, "lodo");
        read(l, "seeds", c.lodo_seeds, "lodo");
        read(l, "reinit_head", c.lodo_reinit_head, "lodo");
    }
    if (j.contains("eval")) {
        reject_unknown(j.at("eval"), {"checkpoint", "split"}, "eval");
        read(j.at("eval"), "checkpoint", c.checkpoint, "eval");
        read(j.at("eval"), "split", c.eval_split, "eval");
    }
    return c;
}

json to_json(const ExperimentConfig& c) {
    const auto& s = c.data.synthetic;
    return {{"protocol", c.protocol},
            {"seed", c.seed},
            {"out", c.out},
            {"data",
             {{"source", c.data.source},
              {"paths", c.data.paths},
              {"domains", c.data.domains},
              {"labels", c.data.labels},
              {"label_map", c.data.label_map},
              {"rate_hz", c.data.rate_hz},
              {"resample_hz", c.data.resample_hz},
              {"synthetic",
               {{"n_classes", s.n_classes},
                {"n_subjects", s.n_subjects},
                {"n_domains", s.n_domains},
                {"rate_hz", s.rate_hz},
                {"segment_seconds", s.segment_seconds},
                {"noise", s.noise},
                {"max_rotation_deg", s.max_rotation_deg}}},
              {"window", c.data.window},
              {"overlap", c.data.overlap},
              {"normalization", c.data.normalization},
              {"split",
               {{"train", c.data.train}, {"val", c.data.val}, {"test", c.data.test}, {"grouping", c.data.grouping}}},
              {"prepared", c.data.prepared}}},
            {"model", {{"frontend", harllm::to_json(c.frontend)},
                       {"backbone", harllm::to_json(c.backbone)},
                       {"lora", harllm::to_json(c.lora)}}},
            {"pretrained", c.pretrained},
            {"train",
             {{"batch_size", c.train.batch_size},
              {"lr", c.train.lr},
              {"beta1", c.train.beta1},
              {"beta2", c.train.beta2},
              {"eps", c.train.eps},
              {"max_epochs", c.train.max_epochs},
              {"patience", c.train.patience},
              {"clip_norm", c.train.clip_norm}}},
            {"sweep", {{"fractions", c.sweep_fractions}, {"seeds", c.sweep_seeds}}},
            {"lodo",
             {{"target", c.lodo_target},
              {"sources", c.lodo_sources},
              {"fractions", c.lodo_fractions},
              {"seeds", c.lodo_seeds},
              {"reinit_head", c.lodo_reinit_head}}},
            {"eval", {{"checkpoint", c.checkpoint}, {"split", c.eval_split}}}};
}

// ---------------------------------------------------------------- data

data::PreparedDataset prepare_dataset(const ExperimentConfig& cfg) {
    if (!cfg.data.prepared.empty()) return data::read_prepared(cfg.data.prepared);

    std::vector<data::Recording> recs;
    data::LabelVocabulary vocab;
    if (cfg.data.source == "synthetic") {
        data::SynthSpec spec = cfg.data.synthetic;
        spec.seed = cfg.seed;
        recs = data::synth_generate(spec);
        vocab = data::synth_vocabulary(spec.n_classes);
    } else {
        vocab = data::LabelVocabulary(cfg.data.labels);
        for (std::size_t i = 0; i < cfg.data.paths.size(); ++i) {
            data::LoadOptions opt;
            opt.vocabulary = vocab;
            opt.label_map = cfg.data.label_map;
            opt.rate_hz = cfg.data.rate_hz;
            const fs::path p(cfg.data.paths[i]);
            opt.domain = cfg.data.domains.empty() ? p.stem().string() : cfg.data.domains[i];
            for (auto& r : data::load_recordings(p, opt)) recs.push_back(std::move(r));
        }
    }
    if (cfg.data.resample_hz > 0.0)
        for (auto& r : recs) r = data::resample_linear(r, cfg.data.resample_hz);

    data::PreparedDataset pd;
    pd.windows = data::build_dataset(recs, vocab, cfg.data.window, cfg.data.overlap);
    data::SplitSpec spec{cfg.data.train, cfg.data.val, cfg.data.test, 1.0, cfg.seed,
                         cfg.data.grouping == "subject" ? data::Grouping::subject : data::Grouping::random};
    const data::Split split =
        data::split_and_subsample(pd.windows.labels, pd.windows.subjects, pd.windows.num_classes(), spec);
    pd.splits.assign(pd.windows.size(), data::SplitTag::train);
    for (auto i : split.val) pd.splits[i] = data::SplitTag::val;
    for (auto i : split.test) pd.splits[i] = data::SplitTag::test;
    pd.norm = data::compute_norm_stats(pd.windows, split.train);
    pd.norm.mode = cfg.data.normalization == "window" ? data::NormMode::window : data::NormMode::dataset;
    pd.seed = cfg.seed;
    pd.overlap = cfg.data.overlap;
    pd.source = cfg.data.source;
    return pd;
}

ModelConfig model_config(const ExperimentConfig& cfg, const std::vector<std::string>& labels) {
    ModelConfig m;
    m.window = cfg.data.window;
    m.frontend = cfg.frontend;
    m.backbone = cfg.backbone;
    m.lora = cfg.lora;
    m.labels = labels;
    m.validate();
    return m;
}

namespace {

data::WindowedDataset normalized(const data::PreparedDataset& ds, const data::NormStats& stats) {
    data::WindowedDataset out = ds.windows;
    data::apply_norm(out, stats);
    return out;
}

std::unique_ptr<HarllmModel<float>> new_model(const ExperimentConfig& cfg, const data::PreparedDataset& ds,
                                              std::uint64_t seed) {
    ExperimentConfig c = cfg;
    c.data.window = ds.windows.window;
    auto model = std::make_unique<HarllmModel<float>>(model_config(c, ds.windows.label_names), seed);
    if (!cfg.pretrained.empty()) load_backbone_weights(model->backbone(), load_tensor_archive(cfg.pretrained));
    return model;
}

std::vector<std::size_t> subsample(const data::WindowedDataset& ds, const std::vector<std::size_t>& pool,
                                   double fraction, std::uint64_t seed) {
    if (fraction >= 1.0) return pool;
    return data::stratified_subsample(pool, ds.labels, ds.num_classes(), fraction, seed);
}

} // namespace

CellResult run_supervised(const ExperimentConfig& cfg, const data::PreparedDataset& ds, double fraction,
                          std::uint64_t seed, HarllmModel<float>* trained) {
    const data::WindowedDataset all = normalized(ds, ds.norm);
    const auto train_idx = subsample(all, ds.indices(data::SplitTag::train), fraction, seed);
    const auto val_idx = ds.indices(data::SplitTag::val);
    const auto test_idx = ds.indices(data::SplitTag::test);
    if (train_idx.empty() || val_idx.empty() || test_idx.empty())
        throw ConfigError("train, validation and test splits must all be non-empty");

    auto model = new_model(cfg, ds, seed);
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    CellResult r;
    r.stage = "supervised";
    r.fraction = fraction;
    r.seed = seed;
    r.log = fit(*model, all.subset(train_idx), all.subset(val_idx), tc);
    r.report = evaluate(*model, all.subset(test_idx), tc.batch_size);
    if (trained) *trained = std::move(*model);
    return r;
}

std::vector<CellResult> run_sweep(const ExperimentConfig& cfg, const data::PreparedDataset& ds) {
    std::vector<CellResult> out;
    for (double f : cfg.sweep_fractions)
        for (auto seed : cfg.resolved_sweep_seeds()) {
            out.push_back(run_supervised(cfg, ds, f, seed));
            out.back().stage = "sweep";
        }
    return out;
}

std::string AccessLog::to_csv() const {
    std::string s = "seed,stage,domain,split,windows\n";
    for (const auto& e : entries)
        s += std::to_string(e.seed) + "," + e.stage + "," + e.domain + "," + e.split + "," +
             std::to_string(e.windows) + "\n";
    return s;
}

std::vector<CellResult> run_lodo(const ExperimentConfig& cfg, const data::PreparedDataset& ds, AccessLog& access) {
    const auto& names = ds.windows.domain_names;
    if (names.size() < 2) throw ConfigError("lodo: needs at least two domains, found " + std::to_string(names.size()));
    const auto target = ds.windows.domain_index(cfg.lodo_target);
    if (!target) throw ConfigError("lodo: target domain '" + cfg.lodo_target + "' is not in the dataset");
    std::set<int> sources;
    if (cfg.lodo_sources.empty()) {
        for (std::size_t d = 0; d < names.size(); ++d)
            if (static_cast<int>(d) != *target) sources.insert(static_cast<int>(d));
    } else {
        for (const auto& s : cfg.lodo_sources) {
            if (s == cfg.lodo_target) throw ConfigError("lodo: target domain '" + s + "' is also listed as a source");
            const auto d = ds.windows.domain_index(s);
            if (!d) throw ConfigError("lodo: source domain '" + s + "' is not in the dataset");
            sources.insert(*d);
        }
    }

    // Index sets are gathered lazily so every materialised subset is logged.
    auto take = [&](const std::string& stage, bool source_side, data::SplitTag tag, std::uint64_t seed) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < ds.windows.size(); ++i) {
            const int d = ds.windows.domains[i];
            const bool match = source_side ? sources.count(d) > 0 : d == *target;
            if (match && ds.splits[i] == tag) idx.push_back(i);
        }
        static const char* tags[] = {"train", "val", "test"};
        access.entries.push_back({stage, source_side ? "sources" : cfg.lodo_target,
                                  tags[static_cast<int>(tag)], idx.size(), seed});
        if (idx.empty())
            throw ConfigError("lodo: empty " + std::string(tags[static_cast<int>(tag)]) + " split for " +
                              (source_side ? std::string("source domains") : "target '" + cfg.lodo_target + "'"));
        return idx;
    };

    std::vector<CellResult> out;
    for (auto seed : cfg.resolved_lodo_seeds()) {
        TrainConfig tc = cfg.train;
        tc.seed = seed;

        const auto src_train = take("pretrain", true, data::SplitTag::train, seed);
        const auto src_val = take("pretrain", true, data::SplitTag::val, seed);
        data::NormStats stats = data::compute_norm_stats(ds.windows, src_train);
        stats.mode = ds.norm.mode;
        const data::WindowedDataset all = normalized(ds, stats);

        auto pretrained = new_model(cfg, ds, seed);
        CellResult zero;
        zero.stage = "zero_shot";
        zero.fraction = 0.0;
        zero.seed = seed;
        zero.log = fit(*pretrained, all.subset(src_train), all.subset(src_val), tc);
        const auto tgt_test = take("zero_shot", false, data::SplitTag::test, seed);
        zero.report = evaluate(*pretrained, all.subset(tgt_test), tc.batch_size);
        out.push_back(zero);

        const auto tgt_train = take("finetune", false, data::SplitTag::train, seed);
        const auto tgt_val = take("finetune", false, data::SplitTag::val, seed);
        for (double f : cfg.lodo_fractions) {
            HarllmModel<float> model = *pretrained;
            if (cfg.lodo_reinit_head) {
                SeedStream init = SeedStream(seed).substream("lodo.reinit_head");
                for (auto& v : model.head_weight().value.span()) v = static_cast<float>(init.normal(0.0, 0.02));
                model.head_bias().value.fill(0.0f);
            }
            CellResult cell;
            cell.stage = "finetune";
            cell.fraction = f;
            cell.seed = seed;
            const auto idx = subsample(all, tgt_train, f, seed);
            cell.log = fit(model, all.subset(idx), all.subset(tgt_val), tc);
            cell.report = evaluate(model, all.subset(tgt_test), tc.batch_size);
            out.push_back(std::move(cell));
        }
    }
    return out;
}

// ---------------------------------------------------------------- commands

namespace {

// Tracks files a command writes; unless committed, they are removed again.
class OutputDir {
public:
    OutputDir(const std::string& dir, bool force, std::initializer_list<const char*> outputs) : dir_(dir) {
        if (dir.empty()) throw ConfigError("no output directory: pass --out or set \"out\"");
        for (const char* name : outputs)
            if (fs::exists(dir_ / name) && !force)
                throw ConfigError("refusing to overwrite " + (dir_ / name).string() + " (pass --force)");
        created_dir_ = !fs::exists(dir_);
        fs::create_directories(dir_);
    }
    OutputDir(const OutputDir&) = delete;
    OutputDir& operator=(const OutputDir&) = delete;
    ~OutputDir() {
        if (committed_) return;
        std::error_code ec;
        for (const auto& f : written_) fs::remove_all(f, ec);
        if (created_dir_ && fs::is_empty(dir_, ec)) fs::remove(dir_, ec);
    }

    fs::path file(const std::string& name) {
        written_.push_back(dir_ / name);
        return written_.back();
    }
    void write(const std::string& name, const std::string& content) {
        std::ofstream out(file(name), std::ios::binary);
        out << content;
        if (!out) throw Error("cannot write " + (dir_ / name).string());
    }
    void commit() { committed_ = true; }

private:
    fs::path dir_;
    bool created_dir_ = false;
    bool committed_ = false;
    std::vector<fs::path> written_;
};

json manifest(const std::string& command, const ExperimentConfig& cfg, const std::vector<std::string>& outputs) {
    json c = to_json(cfg);
    c.erase("out");
    const std::string canonical = c.dump();
    return {{"command", command},
            {"config", c},
            {"config_hash", hex64(fnv1a(canonical))},
            {"seed", cfg.seed},
            {"outputs", outputs}};
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::string parameter_table(const ModelConfig& m) {
    const ParamCounts p = count_parameters(m);
    std::ostringstream s;
    s << "  frontend   " << std::setw(12) << p.frontend << "  trainable\n"
      << "  adapters   " << std::setw(12) << p.adapters << "  trainable\n"
      << "  head       " << std::setw(12) << p.head << "  trainable\n"
      << "  backbone   " << std::setw(12) << p.backbone << "  frozen\n"
      << "  trainable  " << std::setw(12) << p.trainable() << "  (" << std::setprecision(4)
      << 100.0 * static_cast<double>(p.trainable()) / static_cast<double>(p.total()) << "% of all)\n"
      << "  adapters / backbone = " << std::setprecision(4) << 100.0 * p.adapter_fraction() << "%\n";
    return s.str();
}

json param_json(const ParamCounts& p) {
    return {{"frontend", p.frontend},
            {"adapters", p.adapters},
            {"head", p.head},
            {"backbone", p.backbone},
            {"trainable", p.trainable()},
            {"adapter_fraction", p.adapter_fraction()}};
}

json cell_json(const CellResult& c) {
    return {{"stage", c.stage},
            {"fraction", c.fraction},
            {"seed", c.seed},
            {"best_epoch", c.log.best_epoch},
            {"epochs", c.log.epochs.size()},
            {"best_val_weighted_f1", c.log.best_val_f1},
            {"report", report_to_json(c.report)}};
}

int cmd_prepare(const ExperimentConfig& cfg, bool force, std::ostream& out) {
    OutputDir dir(cfg.out, force, {"manifest.json", "run_manifest.json"});
    data::PreparedDataset pd = prepare_dataset(cfg);
    data::write_prepared(cfg.out, pd);
    for (const char* f : {"manifest.json", "windows.f32", "labels.i32", "subjects.i32", "domains.i32", "splits.u8"})
        dir.file(f);
    dir.write("run_manifest.json", dump(manifest("prepare", cfg, {"manifest.json", "windows.f32", "labels.i32",
                                                                 "subjects.i32", "domains.i32", "splits.u8"})));
    dir.commit();
    out << "prepared " << pd.windows.size() << " windows (" << pd.indices(data::SplitTag::train).size() << " train, "
        << pd.indices(data::SplitTag::val).size() << " val, " << pd.indices(data::SplitTag::test).size()
        << " test) in " << cfg.out << "\n";
    return 0;
}

int cmd_train(const ExperimentConfig& cfg, bool force, std::ostream& out) {
    OutputDir dir(cfg.out, force,
                  {"checkpoint.safetensors", "checkpoint.json", "train_log.csv", "report.json", "run_manifest.json"});
    const data::PreparedDataset pd = prepare_dataset(cfg);
    HarllmModel<float> model = *new_model(cfg, pd, cfg.seed);
    const CellResult r = run_supervised(cfg, pd, 1.0, cfg.seed, &model);
    dir.file("checkpoint.json");
    save_checkpoint(dir.file("checkpoint.safetensors"), model, pd.norm);
    r.log.write_csv(dir.file("train_log.csv"));
    json report = report_to_json(r.report);
    report["best_epoch"] = r.log.best_epoch;
    report["best_val_weighted_f1"] = r.log.best_val_f1;
    report["parameters"] = param_json(count_parameters(model.config()));
    dir.write("report.json", dump(report));
    dir.write("run_manifest.json",
              dump(manifest("train", cfg, {"checkpoint.safetensors", "checkpoint.json", "train_log.csv", "report.json"})));
    dir.commit();

    std::size_t trainable = 0, frozen = 0;
    for (auto* p : model.trainable_parameters()) trainable += p->value.size();
    for (auto* p : model.frozen_parameters()) frozen += p->value.size();
    out << "test weighted_f1 " << fmt(r.report.weighted_f1) << "  accuracy " << fmt(r.report.accuracy) << "\n"
        << "best epoch " << r.log.best_epoch << " of " << r.log.epochs.size() << "\n"
        << "parameters: trainable " << trainable << "  frozen " << frozen << "\n";
    return 0;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cmd_sweep(const ExperimentConfig& cfg, bool force, std::ostream& out) {
    OutputDir dir(cfg.out, force, {"sweep.csv", "sweep_reports.json", "run_manifest.json"});
    const data::PreparedDataset pd = prepare_dataset(cfg);
    const auto cells = run_sweep(cfg, pd);
    std::string csv = "fraction,seed,weighted_f1,accuracy\n";
    json reports = json::array();
    for (const auto& c : cells) {
        csv += fmt(c.fraction) + "," + std::to_string(c.seed) + "," + fmt(c.report.weighted_f1) + "," +
               fmt(c.report.accuracy) + "\n";
        reports.push_back(cell_json(c));
    }
    dir.write("sweep.csv", csv);
    dir.write("sweep_reports.json", dump(reports));
    dir.write("run_manifest.json", dump(manifest("sweep", cfg, {"sweep.csv", "sweep_reports.json"})));
    dir.commit();
    for (double f : cfg.sweep_fractions) {
        std::vector<double> f1;
        for (const auto& c : cells)
            if (c.fraction == f) f1.push_back(c.report.weighted_f1);
        out << "fraction " << fmt(f) << "  median weighted_f1 " << fmt(median(f1)) << "\n";
    }
    return 0;
}

int cmd_lodo(const ExperimentConfig& cfg, bool force, std::ostream& out) {
    if (cfg.lodo_target.empty()) throw ConfigError("lodo.target is required");
    OutputDir dir(cfg.out, force, {"lodo.csv", "lodo_reports.json", "access_log.csv", "run_manifest.json"});
    const data::PreparedDataset pd = prepare_dataset(cfg);
    AccessLog access;
    const auto cells = run_lodo(cfg, pd, access);
    std::string csv = "stage,fraction,seed,weighted_f1,accuracy\n";
    json reports = json::array();
    for (const auto& c : cells) {
        csv += c.stage + "," + fmt(c.fraction) + "," + std::to_string(c.seed) + "," + fmt(c.report.weighted_f1) +
               "," + fmt(c.report.accuracy) + "\n";
        reports.push_back(cell_json(c));
    }
    dir.write("lodo.csv", csv);
    dir.write("lodo_reports.json", dump(reports));
    dir.write("access_log.csv", access.to_csv());
    dir.write("run_manifest.json", dump(manifest("lodo", cfg, {"lodo.csv", "lodo_reports.json", "access_log.csv"})));
    dir.commit();
    std::vector<double> zero;
    for (const auto& c : cells)
        if (c.stage == "zero_shot") zero.push_back(c.report.weighted_f1);
    out << "target " << cfg.lodo_target << "  zero-shot median weighted_f1 " << fmt(median(zero)) << "\n";
    for (double f : cfg.lodo_fractions) {
        std::vector<double> f1;
        for (const auto& c : cells)
            if (c.stage == "finetune" && c.fraction == f) f1.push_back(c.report.weighted_f1);
        out << "finetune " << fmt(f) << "  median weighted_f1 " << fmt(median(f1)) << "\n";
    }
    return 0;
}

int cmd_eval(const ExperimentConfig& cfg, bool force, std::ostream& out) {
    if (cfg.checkpoint.empty()) throw ConfigError("eval needs a checkpoint (--checkpoint or eval.checkpoint)");
    if (!fs::exists(cfg.checkpoint)) throw ConfigError("no checkpoint at " + cfg.checkpoint);
    OutputDir dir(cfg.out, force, {"report.json", "run_manifest.json"});
    Checkpoint ck = load_checkpoint(cfg.checkpoint);
    const data::PreparedDataset pd = prepare_dataset(cfg);
    if (pd.windows.label_names != ck.model->config().labels)
        throw IndexError("eval: dataset label vocabulary differs from the checkpoint's");
    const data::WindowedDataset all = normalized(pd, ck.norm);
    std::vector<std::size_t> idx;
    if (cfg.eval_split == "all") {
        idx.resize(all.size());
        std::iota(idx.begin(), idx.end(), 0);
    } else {
        idx = pd.indices(cfg.eval_split == "train" ? data::SplitTag::train
                         : cfg.eval_split == "val" ? data::SplitTag::val
                                                   : data::SplitTag::test);
    }
    const EvalReport r = evaluate(*ck.model, all.subset(idx), cfg.train.batch_size);
    dir.write("report.json", dump(report_to_json(r)));
    dir.write("run_manifest.json", dump(manifest("eval", cfg, {"report.json"})));
    dir.commit();
    out << cfg.eval_split << " weighted_f1 " << fmt(r.weighted_f1) << "  accuracy " << fmt(r.accuracy) << "\n";
    return 0;
}

int cmd_audit(const ExperimentConfig& cfg, bool force, std::ostream& out) {
    std::vector<CheckResult> checks;
    const std::vector<std::string> labels =
        cfg.data.source == "csv" ? cfg.data.labels : data::synth_vocabulary(cfg.data.synthetic.n_classes).names();
    const ModelConfig m = model_config(cfg, labels);
    out << "configured model\n" << parameter_table(m);

    ModelConfig gpt2 = m;
    gpt2.backbone = BackboneConfig::gpt2_small();
    gpt2.frontend.d_llm = gpt2.backbone.d_model;
    gpt2.lora = LoraConfig{};
    out << "GPT-2 Small geometry (r=16, query/key/value)\n" << parameter_table(gpt2);
    const ParamCounts g = count_parameters(gpt2);
    checks.push_back({"gpt2_adapter_fraction", g.adapter_fraction() < 0.01, g.adapter_fraction(), 0.01,
                      std::to_string(g.adapters) + " adapter parameters over " + std::to_string(g.backbone) +
                          " backbone parameters"});

    checks.push_back(check_gradients(gradcheck_toy_config(), cfg.seed));
    checks.push_back(check_lora_zero_init(m, cfg.seed));
    checks.push_back(check_lora_merge(m, cfg.seed));
    if (!cfg.checkpoint.empty()) {
        CheckResult c{"checkpoint", false, 0.0, 0.0, ""};
        try {
            load_checkpoint(cfg.checkpoint);
            c.passed = true;
            c.detail = cfg.checkpoint + " loads with the expected tensors";
        } catch (const Error& e) {
            c.detail = e.what();
        }
        checks.push_back(c);
    }

    bool ok = true;
    json report = json::array();
    for (const auto& c : checks) {
        ok = ok && c.passed;
        out << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << " (measured " << fmt(c.measured)
            << ", tolerance " << fmt(c.tolerance) << ")\n";
        report.push_back({{"name", c.name},
                          {"passed", c.passed},
                          {"measured", c.measured},
                          {"tolerance", c.tolerance},
                          {"detail", c.detail}});
    }
    if (!cfg.out.empty()) {
        OutputDir dir(cfg.out, force, {"audit.json", "run_manifest.json"});
        dir.write("audit.json", dump({{"configured", param_json(count_parameters(m))},
                                      {"gpt2_small", param_json(g)},
                                      {"checks", report}}));
        dir.write("run_manifest.json", dump(manifest("audit", cfg, {"audit.json"})));
        dir.commit();
    }
    return ok ? 0 : 1;
}

void set_path(json& j, const std::string& dotted, const json& value) {
    json* node = &j;
    std::size_t start = 0;
    for (std::size_t dot; (dot = dotted.find('.', start)) != std::string::npos; start = dot + 1) {
        node = &(*node)[dotted.substr(start, dot - start)];
        if (!node->is_object() && !node->is_null()) throw ConfigError("--set " + dotted + ": not an object path");
    }
    (*node)[dotted.substr(start)] = value;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"harllm: IMU activity recognition with a frozen transformer backbone and LoRA adapters", "harllm"};
    app.require_subcommand(1);
    std::string config_path, out_dir, checkpoint, prepared, target;
    std::uint64_t seed = 0;
    bool force = false;
    std::vector<std::string> sets;
    app.add_option("--config", config_path, "JSON experiment configuration")->check(CLI::ExistingFile);
    auto* seed_opt = app.add_option("--seed", seed, "master seed (config: seed)");
    app.add_option("--out", out_dir, "output directory (config: out)");
    app.add_flag("--force", force, "overwrite existing outputs");
    app.add_option("--set", sets, "override any config key, e.g. --set train.lr=0.001");
    app.add_option("--checkpoint", checkpoint, "checkpoint file (config: eval.checkpoint)");
    app.add_option("--prepared", prepared, "prepared dataset directory (config: data.prepared)");
    app.add_option("--target", target, "held-out domain (config: lodo.target)");
    const std::map<std::string, std::string> verbs = {
        {"prepare", "window, split and normalise a dataset into an archive"},
        {"train", "supervised training, test evaluation and checkpoint"},
        {"sweep", "supervised runs over training-data fractions and seeds"},
        {"lodo", "leave-one-domain-out pretraining, zero-shot and fine-tuning"},
        {"audit", "parameter accounting and numerical self-checks"},
        {"eval", "evaluate a checkpoint on a dataset split"}};
    for (const auto& [name, help] : verbs) app.add_subcommand(name, help)->fallthrough();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }
    const std::string verb = app.get_subcommands().front()->get_name();

    try {
        json j = json::object();
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            try {
                j = json::parse(in);
            } catch (const json::exception& e) {
                throw ConfigError(config_path + ": " + e.what());
            }
        }
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
            json value;
            try {
                value = json::parse(s.substr(eq + 1));
            } catch (const json::exception&) {
                value = s.substr(eq + 1);
            }
            set_path(j, s.substr(0, eq), value);
        }
        if (*seed_opt) j["seed"] = seed;
        if (!out_dir.empty()) j["out"] = out_dir;
        if (!checkpoint.empty()) j["eval"]["checkpoint"] = checkpoint;
        if (!prepared.empty()) j["data"]["prepared"] = prepared;
        if (!target.empty()) j["lodo"]["target"] = target;

        ExperimentConfig cfg = config_from_json(j);
        if (verb == "sweep") cfg.protocol = "fraction_sweep";
        if (verb == "lodo") cfg.protocol = "lodo";
        cfg.validate();

        if (verb == "prepare") return cmd_prepare(cfg, force, out);
        if (verb == "train") return cmd_train(cfg, force, out);
        if (verb == "sweep") return cmd_sweep(cfg, force, out);
        if (verb == "lodo") return cmd_lodo(cfg, force, out);
        if (verb == "eval") return cmd_eval(cfg, force, out);
        return cmd_audit(cfg, force, out);
    } catch (const ConfigError& e) {
        err << "harllm " << verb << ": configuration error: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        err << "harllm " << verb << ": " << e.what() << "\n";
        return 2;
    } catch (const DimensionError& e) {
        err << "harllm " << verb << ": configuration error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "harllm " << verb << ": " << e.what() << "\n";
        return 1;
    }
}

} // namespace harllm::cli
