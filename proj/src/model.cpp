// SPDX-License-Identifier: Apache-2.0
#include "harllm/model.hpp"

#include "harllm/data.hpp"

namespace harllm {

void ModelConfig::validate() const {
    frontend.validate();
    backbone.validate();
    lora.validate();
    if (channels != 6) throw ConfigError("model: expected 6 input channels, got " + std::to_string(channels));
    if (frontend.d_llm != backbone.d_model)
        throw ConfigError("model: frontend d_llm " + std::to_string(frontend.d_llm) + " != backbone d_model " +
                          std::to_string(backbone.d_model));
    if (window % frontend.frame_length != 0)
        throw ConfigError("model: window length W=" + std::to_string(window) + " is not divisible by frame length L=" +
                          std::to_string(frontend.frame_length));
    if (frames() > backbone.max_positions)
        throw ConfigError("model: N=" + std::to_string(frames()) + " frames exceed max_positions " +
                          std::to_string(backbone.max_positions));
    if (num_classes() < 2) throw ConfigError("model: need at least 2 classes");
}

ParamCounts count_parameters(const ModelConfig& cfg) {
    ParamCounts c;
    c.frontend = cfg.frontend.param_count();
    c.adapters = lora_param_count(cfg.backbone, cfg.lora);
    c.head = cfg.backbone.d_model * cfg.num_classes() + cfg.num_classes();
    c.backbone = cfg.backbone.base_param_count();
    return c;
}

template <typename T>
Tensor<T> mean_pool(const Tensor<T>& hidden) {
    if (hidden.rank() != 3) throw DimensionError("mean_pool: expected [B, N, d], got " + shape_str(hidden.shape()));
    const std::size_t batch = hidden.dim(0), n = hidden.dim(1), d = hidden.dim(2);
    Tensor<T> out({batch, d});
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t e = 0; e < d; ++e) {
            T sum{0};
            for (std::size_t t = 0; t < n; ++t) sum += hidden[(b * n + t) * d + e];
            out[b * d + e] = sum / static_cast<T>(n);
        }
    return out;
}

template <typename T>
Tensor<T> mean_pool_backward(const Tensor<T>& grad_pooled, std::size_t tokens) {
    const std::size_t batch = grad_pooled.dim(0), d = grad_pooled.dim(1);
    Tensor<T> out({batch, tokens, d});
    const T inv = T{1} / static_cast<T>(tokens);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < tokens; ++t)
            for (std::size_t e = 0; e < d; ++e) out[(b * tokens + t) * d + e] = grad_pooled[b * d + e] * inv;
    return out;
}

template <typename T>
std::vector<int> predict(const Tensor<T>& logits) {
    const std::size_t batch = logits.dim(0), k = logits.dim(1);
    std::vector<int> out(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        const T* row = logits.data() + b * k;
        out[b] = static_cast<int>(std::max_element(row, row + k) - row);
    }
    return out;
}

template <typename T>
HarllmModel<T>::HarllmModel(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_((cfg.validate(), cfg)),
      frontend_(cfg.frontend, SeedStream(seed).substream("init.frontend")),
      backbone_(cfg.backbone, cfg.lora, SeedStream(seed).substream("init.backbone")) {
    const std::size_t d = cfg.backbone.d_model, k = cfg.num_classes();
    Tensor<T> w({d, k});
    SeedStream rng = SeedStream(seed).substream("init.head");
    for (auto& v : w.span()) v = static_cast<T>(rng.normal(0.0, 0.02));
    head_w_ = Param<T>("head.weight", std::move(w), true);
    head_b_ = Param<T>("head.bias", Tensor<T>({k}), true);
}

template <typename T>
Tensor<T> HarllmModel<T>::forward(const Tensor<T>& windows, SeedStream* rng, bool training, Cache* cache) const {
    if (windows.rank() != 3 || windows.dim(1) != cfg_.window || windows.dim(2) != cfg_.channels)
        throw DimensionError("model: expected windows [B, " + std::to_string(cfg_.window) + ", " +
                             std::to_string(cfg_.channels) + "], got " + shape_str(windows.shape()));
    SeedStream fallback(0);
    if (training && !rng) throw ConfigError("model: training forward needs a seed stream");
    SeedStream& stream = rng ? *rng : fallback;

    const Tensor<T> frames = data::frame(windows, cfg_.frontend.frame_length);
    const Tensor<T> tokens = frontend_.forward(frames, cache ? &cache->frontend : nullptr);
    const Tensor<T> hidden = backbone_.forward(tokens, stream, training, cache ? &cache->backbone : nullptr);
    Tensor<T> pooled = mean_pool(hidden);
    Tensor<T> logits = linear(pooled, head_w_.value, &head_b_.value);
    if (cache) {
        cache->tokens = tokens.dim(1);
        cache->pooled = std::move(pooled);
    }
    return logits;
}

template <typename T>
void HarllmModel<T>::backward(const Tensor<T>& grad_logits, const Cache& cache) {
    Tensor<T> grad_pooled(cache.pooled.shape());
    linear_backward(grad_logits, cache.pooled, head_w_.value, &grad_pooled, &head_w_.grad, &head_b_.grad);
    const Tensor<T> grad_hidden = mean_pool_backward(grad_pooled, cache.tokens);
    const Tensor<T> grad_tokens = backbone_.backward(grad_hidden, cache.backbone);
    frontend_.backward(grad_tokens, cache.frontend);
}

template <typename T>
std::vector<Param<T>*> HarllmModel<T>::trainable_parameters() {
    std::vector<Param<T>*> out = frontend_.parameters();
    for (auto* p : backbone_.adapter_parameters()) out.push_back(p);
    out.push_back(&head_w_);
    out.push_back(&head_b_);
    return out;
}

template <typename T>
std::vector<Param<T>*> HarllmModel<T>::frozen_parameters() {
    return backbone_.base_parameters();
}

template <typename T>
std::vector<Param<T>*> HarllmModel<T>::all_parameters() {
    auto out = trainable_parameters();
    for (auto* p : frozen_parameters()) out.push_back(p);
    return out;
}

template <typename T>
Param<T>* HarllmModel<T>::find(const std::string& name) {
    for (auto* p : all_parameters())
        if (p->name == name) return p;
    return nullptr;
}

template <typename T>
void HarllmModel<T>::zero_grad() {
    for (auto* p : trainable_parameters()) p->zero_grad();
}

template Tensor<float> mean_pool<float>(const Tensor<float>&);
template Tensor<double> mean_pool<double>(const Tensor<double>&);
template Tensor<float> mean_pool_backward<float>(const Tensor<float>&, std::size_t);
template Tensor<double> mean_pool_backward<double>(const Tensor<double>&, std::size_t);
template std::vector<int> predict<float>(const Tensor<float>&);
template std::vector<int> predict<double>(const Tensor<double>&);
template class HarllmModel<float>;
template class HarllmModel<double>;

} // namespace harllm
