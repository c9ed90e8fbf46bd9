// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "harllm/checkpoint.hpp"
#include "harllm/diagnostics.hpp"
#include "harllm/error.hpp"
#include "harllm/model.hpp"
#include "harllm/tensor_archive.hpp"

using namespace harllm;
namespace fs = std::filesystem;

namespace {

ModelConfig toy() {
    ModelConfig c;
    c.window = 128;
    c.frontend.frame_length = 16;
    c.frontend.d_llm = 48;
    c.frontend.encoder_channels = 8;
    c.frontend.branch_channels = 16;
    c.backbone.n_layers = 2;
    c.backbone.d_model = 48;
    c.backbone.n_heads = 4;
    c.backbone.max_positions = 64;
    c.lora.rank = 16;
    c.lora.alpha = 32;
    c.labels = {"walk", "run", "sit", "stand"};
    return c;
}

template <typename T>
Tensor<T> randn(const Shape& s, SeedStream& rng, double sd = 1.0) {
    Tensor<T> t(s);
    for (auto& v : t.span()) v = static_cast<T>(rng.normal(0.0, sd));
    return t;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("harllm_test_model_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

} // namespace

TEST_CASE("mean_pool examples") {
    const Tensor<double> h({1, 3, 2}, {1, 10, 2, 20, 3, 30});
    CHECK(mean_pool(h) == Tensor<double>({1, 2}, {2, 20}));
    const Tensor<double> one({2, 1, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(mean_pool(one) == Tensor<double>({2, 3}, {1, 2, 3, 4, 5, 6}));
    CHECK_THROWS_AS(mean_pool(Tensor<double>({2, 3})), DimensionError);
    const auto g = mean_pool_backward(Tensor<double>({1, 2}, {3, 6}), 3);
    CHECK(g == Tensor<double>({1, 3, 2}, {1, 2, 1, 2, 1, 2}));
}

TEST_CASE("predict picks the argmax, ties to the lowest index") {
    const Tensor<float> logits({3, 3}, {0, 2, 1, 5, 5, 1, -1, -1, -1});
    CHECK(predict(logits) == std::vector<int>{1, 0, 0});
}

TEST_CASE("config validation across modules") {
    ModelConfig c = toy();
    c.backbone.d_model = 60;
    c.backbone.n_heads = 4;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = toy();
    c.window = 120;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = toy();
    c.backbone.max_positions = 4;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = toy();
    c.labels = {"only"};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_NOTHROW(toy().validate());
}

TEST_CASE("harllm_forward examples") {
    HarllmModel<float> m(toy(), 1);
    SeedStream rng(2);
    const auto x = randn<float>({5, 128, 6}, rng);
    const auto logits = m.forward(x, nullptr, false);
    CHECK(logits.shape() == Shape{5, 4});
    CHECK(m.forward(x, nullptr, false) == logits);
    CHECK_THROWS_AS(m.forward(randn<float>({5, 100, 6}, rng), nullptr, false), DimensionError);
    CHECK_THROWS_AS(m.forward(x, nullptr, true), ConfigError);

    Tensor<float> big({2, 128, 6});
    for (std::size_t i = 0; i < big.size(); ++i) big[i] = (i % 3 == 0 ? -1e6f : 1e6f) * static_cast<float>(i % 7) / 7.0f;
    for (float v : m.forward(big, nullptr, false).span()) CHECK(std::isfinite(v));
}

TEST_CASE("parameter partition is disjoint and complete") {
    HarllmModel<float> m(toy(), 3);
    std::set<std::string> trainable, frozen;
    for (auto* p : m.trainable_parameters()) {
        CHECK(p->trainable);
        trainable.insert(p->name);
    }
    for (auto* p : m.frozen_parameters()) {
        CHECK_FALSE(p->trainable);
        frozen.insert(p->name);
    }
    for (const auto& n : trainable) CHECK(frozen.count(n) == 0);
    CHECK(trainable.size() + frozen.size() == m.all_parameters().size());
    for (const auto& n : frozen) CHECK(n.rfind("backbone.", 0) == 0);
    for (const auto& n : trainable)
        CHECK((n.rfind("frontend.", 0) == 0 || n.rfind("lora.", 0) == 0 || n.rfind("head.", 0) == 0));
    CHECK(m.find("head.weight") == &m.head_weight());
    CHECK(m.find("nope") == nullptr);
}

TEST_CASE("parameter counts match the closed form") {
    const ModelConfig cfg = toy();
    HarllmModel<float> m(cfg, 4);
    std::size_t trainable = 0, frozen = 0;
    for (auto* p : m.trainable_parameters()) trainable += p->value.size();
    for (auto* p : m.frozen_parameters()) frozen += p->value.size();
    const ParamCounts c = count_parameters(cfg);
    CHECK(c.trainable() == trainable);
    CHECK(c.backbone == frozen);
    CHECK(c.head == 48 * 4 + 4);
    CHECK(c.adapters == 2 * 3 * 16 * (48 + 48));
    CHECK(c.frontend == cfg.frontend.param_count());

    ModelConfig gpt2 = cfg;
    gpt2.backbone = BackboneConfig::gpt2_small();
    gpt2.frontend.d_llm = 768;
    gpt2.lora = LoraConfig{};
    const ParamCounts g = count_parameters(gpt2);
    CHECK(g.adapters == 884736);
    CHECK(g.adapter_fraction() < 0.01);
}

TEST_CASE("untrained head gives near-uniform initial loss") {
    HarllmModel<double> m(toy(), 5);
    SeedStream rng(6);
    const auto logits = m.forward(randn<double>({16, 128, 6}, rng), nullptr, false);
    for (double v : logits.span()) CHECK(std::fabs(v) < 0.5);
}

TEST_CASE("end-to-end gradient check") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const CheckResult r = check_gradients(gradcheck_toy_config(), seed);
        CHECK_MESSAGE(r.passed, r.detail);
        CHECK(r.measured <= 1e-3);
    }
}

TEST_CASE("zero-initialised adapters leave the output unchanged") {
    const CheckResult r = check_lora_zero_init(toy(), 7);
    CHECK_MESSAGE(r.passed, r.detail);
    CHECK(r.measured == 0.0);
}

TEST_CASE("merged adapters reproduce the unmerged logits") {
    const CheckResult r = check_lora_merge(toy(), 8, 20);
    CHECK_MESSAGE(r.passed, r.detail);
    CHECK(r.measured <= 1e-5);
}

TEST_CASE("cast preserves every parameter") {
    HarllmModel<float> m(toy(), 9);
    const HarllmModel<double> d = m.cast<double>();
    auto& dd = const_cast<HarllmModel<double>&>(d);
    auto src = m.all_parameters();
    auto dst = dd.all_parameters();
    REQUIRE(src.size() == dst.size());
    for (std::size_t i = 0; i < src.size(); ++i) CHECK(dst[i]->value.cast<float>() == src[i]->value);
}

TEST_CASE("checkpoint save and load round trip") {
    const auto dir = scratch("roundtrip");
    HarllmModel<float> m(toy(), 10);
    randomize_adapters(m, 11);
    data::NormStats norm;
    norm.mean = {1, 2, 3, 4, 5, 6};
    norm.std = {0.5, 0.25, 1, 2, 3, 4};
    save_checkpoint(dir / "ck.safetensors", m, norm);
    CHECK(fs::exists(checkpoint_sidecar(dir / "ck.safetensors")));

    const Checkpoint ck = load_checkpoint(dir / "ck.safetensors");
    CHECK(ck.norm.mean == norm.mean);
    CHECK(ck.norm.std == norm.std);
    CHECK(ck.model->config().labels == toy().labels);
    SeedStream rng(12);
    const auto x = randn<float>({3, 128, 6}, rng);
    CHECK(ck.model->forward(x, nullptr, false) == m.forward(x, nullptr, false));
}

TEST_CASE("corrupted adapter shape is reported by name") {
    const auto dir = scratch("corrupt");
    HarllmModel<float> m(toy(), 13);
    save_checkpoint(dir / "ck.safetensors", m, data::NormStats{});
    std::map<std::string, std::string> meta;
    TensorMap tensors = load_tensor_archive(dir / "ck.safetensors", &meta);
    const std::string victim = "lora.layers.1.value.A";
    REQUIRE(tensors.count(victim) == 1);
    tensors[victim] = {{8, 48}, std::vector<float>(8 * 48, 0.0f)};
    save_tensor_archive(dir / "ck.safetensors", tensors, meta);
    try {
        load_checkpoint(dir / "ck.safetensors");
        FAIL("expected a checkpoint error");
    } catch (const CheckpointError& e) {
        CHECK(std::string(e.what()).find(victim) != std::string::npos);
    }

    tensors.erase(victim);
    save_tensor_archive(dir / "ck.safetensors", tensors, meta);
    CHECK_THROWS_AS(load_checkpoint(dir / "ck.safetensors"), CheckpointError);

    fs::remove(checkpoint_sidecar(dir / "ck.safetensors"));
    CHECK_THROWS_AS(load_checkpoint(dir / "ck.safetensors"), CheckpointError);
}

TEST_CASE("config JSON round trip rejects unknown keys") {
    const ModelConfig cfg = toy();
    const ModelConfig back = model_config_from_json(to_json(cfg));
    CHECK(to_json(back) == to_json(cfg));
    auto j = to_json(cfg.lora);
    j["ranks"] = 4;
    CHECK_THROWS_AS(lora_config_from_json(j), ConfigError);
}
