// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "harllm/cli.hpp"
#include "harllm/data.hpp"
#include "harllm/model.hpp"
#include "harllm/synthetic.hpp"
#include "harllm/tensor_archive.hpp"
#include "json.hpp"

using namespace harllm;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("harllm_test_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& f) {
    std::ifstream in(f, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

json tiny_config() {
    return json::parse(R"({
      "seed": 3,
      "data": {
        "source": "synthetic",
        "synthetic": {"n_classes": 4, "n_subjects": 2, "n_domains": 2, "segment_seconds": 6},
        "window": 32, "overlap": 0.5
      },
      "model": {
        "frontend": {"frame_length": 8, "d_llm": 12, "encoder_channels": 3, "branch_channels": 4},
        "backbone": {"n_layers": 1, "d_model": 12, "n_heads": 2, "max_positions": 8},
        "lora": {"rank": 2, "alpha": 4}
      },
      "train": {"batch_size": 32, "lr": 0.003, "max_epochs": 2, "patience": 2},
      "sweep": {"fractions": [1.0, 0.5], "seeds": [3]},
      "lodo": {"target": "d1", "fractions": [0.5], "seeds": [3]}
    })");
}

fs::path write_config(const fs::path& dir, const json& j) {
    const fs::path f = dir / "config.json";
    std::ofstream(f) << j.dump(2);
    return f;
}

struct Result {
    int code;
    std::string out, err;
};

Result invoke(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

// CSV without its trailing `seconds` column.
std::string strip_timing(const std::string& csv) {
    std::istringstream in(csv);
    std::string line, out;
    while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
    return out;
}

} // namespace

TEST_CASE("usage errors exit with status 2") {
    CHECK(invoke({}).code == 2);
    CHECK(invoke({"frobnicate"}).code == 2);
    CHECK(invoke({"train", "--config", "/nonexistent/config.json"}).code == 2);
    const auto dir = scratch("usage");
    json j = tiny_config();
    j["train"]["learning_rate"] = 0.1;
    const Result r = invoke({"prepare", "--config", write_config(dir, j).string(), "--out", (dir / "o").string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("learning_rate") != std::string::npos);
}

TEST_CASE("prepare is byte-identical across runs") {
    const auto dir = scratch("prepare");
    const auto cfg = write_config(dir, tiny_config()).string();
    REQUIRE(invoke({"prepare", "--config", cfg, "--out", (dir / "a").string()}).code == 0);
    REQUIRE(invoke({"prepare", "--config", cfg, "--out", (dir / "b").string()}).code == 0);
    for (const auto& e : fs::directory_iterator(dir / "a")) {
        const auto name = e.path().filename();
        CHECK_MESSAGE(slurp(e.path()) == slurp(dir / "b" / name), name.string());
    }
    REQUIRE(invoke({"prepare", "--config", cfg, "--seed", "4", "--out", (dir / "c").string()}).code == 0);
    CHECK(slurp(dir / "a" / "windows.f32") != slurp(dir / "c" / "windows.f32"));
}

TEST_CASE("prepared manifest window count matches the stride formula") {
    const auto dir = scratch("count");
    REQUIRE(invoke({"prepare", "--config", write_config(dir, tiny_config()).string(), "--out", (dir / "p").string()})
                .code == 0);
    const json m = json::parse(slurp(dir / "p" / "manifest.json"));
    // 2 domains x 2 subjects, each recording 4 classes x 6 s x 50 Hz
    const std::size_t length = 4 * 6 * 50;
    const std::size_t stride = 16;
    const std::size_t per_recording = (length - 32) / stride + 1;
    CHECK(m.at("count") == 4 * per_recording);
    CHECK(m.at("count") == 4 * data::window_count(length, 32, 0.5));
    const json& s = m.at("split_counts");
    CHECK(s.at("train").get<std::size_t>() + s.at("val").get<std::size_t>() + s.at("test").get<std::size_t>() ==
          m.at("count").get<std::size_t>());
}

TEST_CASE("missing input path is a clear nonzero exit") {
    const auto dir = scratch("missing");
    json j = tiny_config();
    j["data"]["source"] = "csv";
    j["data"]["paths"] = {(dir / "nope.csv").string()};
    j["data"]["labels"] = {"walk", "run"};
    const Result r = invoke({"prepare", "--config", write_config(dir, j).string(), "--out", (dir / "p").string()});
    CHECK(r.code != 0);
    CHECK(r.err.find("nope.csv") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "p" / "manifest.json"));
}

TEST_CASE("outputs are not overwritten unless forced") {
    const auto dir = scratch("force");
    const auto cfg = write_config(dir, tiny_config()).string();
    const auto out = (dir / "p").string();
    REQUIRE(invoke({"prepare", "--config", cfg, "--out", out}).code == 0);
    const Result again = invoke({"prepare", "--config", cfg, "--out", out});
    CHECK(again.code == 2);
    CHECK(again.err.find("--force") != std::string::npos);
    CHECK(invoke({"prepare", "--config", cfg, "--out", out, "--force"}).code == 0);
}

TEST_CASE("train writes its artifacts and is reproducible") {
    const auto dir = scratch("train");
    const auto cfg = write_config(dir, tiny_config()).string();
    const Result a = invoke({"train", "--config", cfg, "--out", (dir / "a").string()});
    REQUIRE_MESSAGE(a.code == 0, a.err);
    const Result b = invoke({"train", "--config", cfg, "--out", (dir / "b").string()});
    REQUIRE(b.code == 0);
    for (const char* f : {"checkpoint.safetensors", "checkpoint.json", "report.json", "run_manifest.json"})
        CHECK_MESSAGE(slurp(dir / "a" / f) == slurp(dir / "b" / f), f);
    CHECK(strip_timing(slurp(dir / "a" / "train_log.csv")) == strip_timing(slurp(dir / "b" / "train_log.csv")));
    CHECK(slurp(dir / "a" / "train_log.csv").rfind("epoch,train_loss,val_weighted_f1,val_accuracy,seconds\n", 0) == 0);

    const json report = json::parse(slurp(dir / "a" / "report.json"));
    CHECK(a.out.find("weighted_f1") != std::string::npos);
    const ModelConfig mc = cli::model_config(cli::config_from_json(tiny_config()), data::synth_vocabulary(4).names());
    const auto counts = count_parameters(mc);
    CHECK(a.out.find("trainable " + std::to_string(counts.trainable())) != std::string::npos);
    CHECK(a.out.find("frozen " + std::to_string(counts.backbone)) != std::string::npos);

    const json manifest = json::parse(slurp(dir / "a" / "run_manifest.json"));
    CHECK(manifest.at("seed") == 3);
    CHECK(manifest.at("command") == "train");
    CHECK_FALSE(manifest.at("config_hash").get<std::string>().empty());

    const Result ev = invoke({"eval", "--config", cfg, "--checkpoint", (dir / "a" / "checkpoint.safetensors").string(),
                              "--out", (dir / "e").string()});
    REQUIRE_MESSAGE(ev.code == 0, ev.err);
    const json er = json::parse(slurp(dir / "e" / "report.json"));
    CHECK(er.at("weighted_f1") == report.at("weighted_f1"));
}

TEST_CASE("sweep at fraction 1 agrees with train") {
    const auto dir = scratch("sweep");
    const auto cfg = write_config(dir, tiny_config()).string();
    REQUIRE(invoke({"train", "--config", cfg, "--out", (dir / "t").string()}).code == 0);
    const Result s = invoke({"sweep", "--config", cfg, "--out", (dir / "s").string()});
    REQUIRE_MESSAGE(s.code == 0, s.err);
    const std::string csv = slurp(dir / "s" / "sweep.csv");
    CHECK(csv.rfind("fraction,seed,weighted_f1,accuracy\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    const json reports = json::parse(slurp(dir / "s" / "sweep_reports.json"));
    const json train = json::parse(slurp(dir / "t" / "report.json"));
    CHECK(reports.at(0).at("fraction") == 1.0);
    CHECK(reports.at(0).at("report").at("weighted_f1") == train.at("weighted_f1"));
}

TEST_CASE("lodo mechanics and access log") {
    const auto dir = scratch("lodo");
    const auto cfg = write_config(dir, tiny_config()).string();
    const Result r = invoke({"lodo", "--config", cfg, "--out", (dir / "l").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const std::string csv = slurp(dir / "l" / "lodo.csv");
    CHECK(csv.rfind("stage,fraction,seed,weighted_f1,accuracy\n", 0) == 0);
    CHECK(csv.find("\nzero_shot,") != std::string::npos);
    CHECK(csv.find("\nfinetune,0.5,") != std::string::npos);

    // stage one reads source domains and only the target test split
    std::istringstream log(slurp(dir / "l" / "access_log.csv"));
    std::string line;
    std::getline(log, line);
    CHECK(line == "seed,stage,domain,split,windows");
    bool saw_target_test = false;
    while (std::getline(log, line)) {
        if (line.find(",pretrain,") != std::string::npos) CHECK(line.find(",d1,") == std::string::npos);
        if (line.find(",zero_shot,") != std::string::npos) {
            CHECK(line.find(",d1,test,") != std::string::npos);
            saw_target_test = true;
        }
    }
    CHECK(saw_target_test);

    const Result again = invoke({"lodo", "--config", cfg, "--out", (dir / "m").string()});
    REQUIRE(again.code == 0);
    for (const char* f : {"lodo.csv", "lodo_reports.json", "access_log.csv", "run_manifest.json"})
        CHECK_MESSAGE(slurp(dir / "l" / f) == slurp(dir / "m" / f), f);
}

TEST_CASE("lodo target listed among the sources is a configuration error") {
    const auto dir = scratch("lodo_conflict");
    json j = tiny_config();
    j["lodo"]["sources"] = {"d0", "d1"};
    const Result r = invoke({"lodo", "--config", write_config(dir, j).string(), "--out", (dir / "l").string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("d1") != std::string::npos);
    const Result missing = invoke({"lodo", "--config", write_config(dir, tiny_config()).string(), "--target", "d9",
                                   "--out", (dir / "m").string()});
    CHECK(missing.code == 2);
}

TEST_CASE("flags and --set override config keys") {
    const auto dir = scratch("override");
    const auto cfg = write_config(dir, tiny_config()).string();
    REQUIRE(invoke({"prepare", "--config", cfg, "--set", "data.overlap=0", "--out", (dir / "p").string()}).code == 0);
    const json m = json::parse(slurp(dir / "p" / "manifest.json"));
    CHECK(m.at("count") == 4 * data::window_count(4 * 6 * 50, 32, 0.0));
    CHECK(invoke({"prepare", "--config", cfg, "--set", "data.overlap", "--out", (dir / "q").string()}).code == 2);
}

TEST_CASE("audit passes on the shipped toy configuration") {
    const auto dir = scratch("audit");
    const Result r = invoke({"audit", "--config", "configs/toy.json", "--out", (dir / "a").string()});
    CHECK_MESSAGE(r.code == 0, r.out, r.err);
    const json a = json::parse(slurp(dir / "a" / "audit.json"));
    for (const auto& c : a.at("checks")) CHECK_MESSAGE(c.at("passed").get<bool>(), c.dump());
    CHECK(r.out.find("884736") != std::string::npos);
}

TEST_CASE("audit and eval name a corrupted adapter tensor") {
    const auto dir = scratch("corrupt");
    const auto cfg = write_config(dir, tiny_config()).string();
    REQUIRE(invoke({"train", "--config", cfg, "--out", (dir / "t").string()}).code == 0);
    const fs::path ck = dir / "t" / "checkpoint.safetensors";
    std::map<std::string, std::string> meta;
    TensorMap tensors = load_tensor_archive(ck, &meta);
    const std::string victim = "lora.layers.0.key.B";
    REQUIRE(tensors.count(victim) == 1);
    tensors[victim] = {{3, 3}, std::vector<float>(9, 0.0f)};
    save_tensor_archive(ck, tensors, meta);

    const Result ev = invoke({"eval", "--config", cfg, "--checkpoint", ck.string(), "--out", (dir / "e").string()});
    CHECK(ev.code == 1);
    CHECK(ev.err.find(victim) != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "e" / "report.json"));

    const Result au = invoke({"audit", "--config", cfg, "--checkpoint", ck.string()});
    CHECK(au.code == 1);
    CHECK((au.out + au.err).find(victim) != std::string::npos);
}

TEST_CASE("aborted training leaves no partial outputs") {
    const auto dir = scratch("abort");
    json j = tiny_config();
    j["train"]["lr"] = 1e30;
    j["train"]["max_epochs"] = 5;
    const Result r = invoke({"train", "--config", write_config(dir, j).string(), "--out", (dir / "t").string()});
    if (r.code == 0) {
        MESSAGE("training did not diverge at this learning rate; nothing to check");
        return;
    }
    CHECK(r.code == 1);
    CHECK(r.err.find("non-finite") != std::string::npos);
    for (const char* f : {"checkpoint.safetensors", "checkpoint.json", "train_log.csv", "report.json"})
        CHECK_FALSE(fs::exists(dir / "t" / f));
}
