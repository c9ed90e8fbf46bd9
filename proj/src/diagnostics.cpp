// SPDX-License-Identifier: Apache-2.0
#include "harllm/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "harllm/grad_check.hpp"

namespace harllm {

ModelConfig gradcheck_toy_config() {
    ModelConfig c;
    c.window = 8;
    c.frontend.frame_length = 4;
    c.frontend.d_llm = 12;
    c.frontend.encoder_channels = 3;
    c.frontend.branch_channels = 4;
    c.backbone.n_layers = 1;
    c.backbone.d_model = 12;
    c.backbone.n_heads = 2;
    c.backbone.max_positions = 8;
    c.lora.rank = 2;
    c.lora.alpha = 4;
    c.labels = {"a", "b"};
    return c;
}

namespace {

template <typename T>
Tensor<T> random_windows(const ModelConfig& cfg, std::size_t batch, SeedStream& rng) {
    Tensor<T> x({batch, cfg.window, cfg.channels});
    for (auto& v : x.span()) v = static_cast<T>(rng.normal(0.0, 1.0));
    return x;
}

std::string fmt(double v) {
    std::ostringstream s;
    s << v;
    return s.str();
}

} // namespace

template <typename T>
void randomize_adapters(HarllmModel<T>& model, std::uint64_t seed, double sd) {
    SeedStream rng = SeedStream(seed).substream("randomize_adapters");
    for (auto* p : model.backbone().adapter_parameters())
        if (p->name.ends_with(".B"))
            for (auto& v : p->value.span()) v = static_cast<T>(rng.normal(0.0, sd));
}

template <typename T>
HarllmModel<T> merge_adapters(const HarllmModel<T>& model) {
    ModelConfig cfg = model.config();
    cfg.lora.targets.clear();
    HarllmModel<T> out(cfg, 0);
    auto& src = const_cast<HarllmModel<T>&>(model);
    for (auto* p : out.all_parameters()) p->value = src.find(p->name)->value;
    const LoraConfig& lora = model.config().lora;
    for (std::size_t i = 0; i < cfg.backbone.n_layers; ++i) {
        const BlockParams<T>& s = model.backbone().layer(i);
        BlockParams<T>& d = out.backbone().layer(i);
        if (s.lora_query) d.query_w.value = lora_merge(s.query_w.value, *s.lora_query, lora);
        if (s.lora_key) d.key_w.value = lora_merge(s.key_w.value, *s.lora_key, lora);
        if (s.lora_value) d.value_w.value = lora_merge(s.value_w.value, *s.lora_value, lora);
    }
    return out;
}

CheckResult check_gradients(const ModelConfig& cfg, std::uint64_t seed, double tolerance) {
    CheckResult r{"gradient_check", false, 0.0, tolerance, ""};
    ModelConfig c = cfg;
    c.lora.dropout = 0.0;
    HarllmModel<double> model(c, seed);
    SeedStream rng = SeedStream(seed).substream("gradient_check");
    // Default init leaves ReLU pre-activations within a step of the kink; check at a generic point instead.
    for (auto* p : model.trainable_parameters())
        for (auto& v : p->value.span()) v += rng.normal(0.0, 0.3);
    const std::size_t batch = 3;
    const Tensor<double> x = random_windows<double>(c, batch, rng);
    std::vector<int> labels(batch);
    for (std::size_t i = 0; i < batch; ++i) labels[i] = static_cast<int>(i % c.num_classes());

    typename HarllmModel<double>::Cache cache;
    const auto ce = softmax_cross_entropy(model.forward(x, nullptr, false, &cache), labels);
    model.zero_grad();
    model.backward(ce.grad_logits, cache);

    std::vector<GradCheckTarget> targets;
    for (auto* p : model.trainable_parameters()) targets.push_back({p->name, p->value.span(), p->grad.span()});
    const auto loss = [&] { return softmax_cross_entropy(model.forward(x, nullptr, false), labels).loss; };
    const GradCheckResult g = grad_check(loss, targets);
    r.measured = g.max_rel_error;
    r.passed = g.max_rel_error <= tolerance;
    r.detail = "analytic " + fmt(g.analytic) + " numeric " + fmt(g.numeric) + "; max relative error " + fmt(g.max_rel_error) + " at " + g.worst_param + "[" +
               std::to_string(g.worst_index) + "] over " + std::to_string(g.coordinates) + " coordinates";
    return r;
}

CheckResult check_lora_zero_init(const ModelConfig& cfg, std::uint64_t seed, std::size_t batch) {
    CheckResult r{"lora_zero_init", false, 0.0, 0.0, ""};
    HarllmModel<float> with(cfg, seed);
    ModelConfig plain_cfg = cfg;
    plain_cfg.lora.targets.clear();
    HarllmModel<float> plain(plain_cfg, seed);
    SeedStream rng = SeedStream(seed).substream("zero_init_check");
    const Tensor<float> x = random_windows<float>(cfg, batch, rng);
    const Tensor<float> a = with.forward(x, nullptr, false);
    const Tensor<float> b = plain.forward(x, nullptr, false);
    std::size_t differing = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        r.measured = std::max(r.measured, static_cast<double>(std::fabs(a[i] - b[i])));
        differing += a[i] != b[i];
    }
    r.passed = differing == 0;
    r.detail = std::to_string(differing) + " of " + std::to_string(a.size()) + " logits differ";
    return r;
}

CheckResult check_lora_merge(const ModelConfig& cfg, std::uint64_t seed, std::size_t inputs, double tolerance) {
    CheckResult r{"lora_merge", false, 0.0, tolerance, ""};
    HarllmModel<float> model(cfg, seed);
    randomize_adapters(model, seed);
    const HarllmModel<float> merged = merge_adapters(model);
    SeedStream rng = SeedStream(seed).substream("merge_check");
    for (std::size_t i = 0; i < inputs; ++i) {
        const Tensor<float> x = random_windows<float>(cfg, 1, rng);
        const Tensor<float> a = model.forward(x, nullptr, false);
        const Tensor<float> b = merged.forward(x, nullptr, false);
        for (std::size_t j = 0; j < a.size(); ++j)
            r.measured = std::max(r.measured, static_cast<double>(std::fabs(a[j] - b[j])));
    }
    r.passed = r.measured <= tolerance;
    r.detail = "max abs logit difference " + fmt(r.measured) + " over " + std::to_string(inputs) + " inputs";
    return r;
}

template void randomize_adapters<float>(HarllmModel<float>&, std::uint64_t, double);
template void randomize_adapters<double>(HarllmModel<double>&, std::uint64_t, double);
template HarllmModel<float> merge_adapters<float>(const HarllmModel<float>&);
template HarllmModel<double> merge_adapters<double>(const HarllmModel<double>&);

} // namespace harllm
