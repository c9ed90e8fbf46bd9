// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "harllm/backbone.hpp"
#include "harllm/frontend.hpp"

namespace harllm {

struct ModelConfig {
    std::size_t window = 128;
    std::size_t channels = 6;
    FrontendConfig frontend;
    BackboneConfig backbone;
    LoraConfig lora;
    std::vector<std::string> labels; // K = labels.size()

    std::size_t num_classes() const noexcept { return labels.size(); }
    std::size_t frames() const { return window / frontend.frame_length; }
    /// Checks cross-module consistency: d_llm == d_model, W divisible by L,
    /// N <= max_positions, K >= 2.
    void validate() const;
};

struct ParamCounts {
    std::size_t frontend = 0;
    std::size_t adapters = 0;
    std::size_t head = 0;
    std::size_t backbone = 0; // frozen base weights

    std::size_t trainable() const noexcept { return frontend + adapters + head; }
    std::size_t total() const noexcept { return trainable() + backbone; }
    /// adapters / backbone
    double adapter_fraction() const noexcept {
        return backbone ? static_cast<double>(adapters) / static_cast<double>(backbone) : 0.0;
    }
};

/// Closed-form counts from the configuration alone (no allocation).
ParamCounts count_parameters(const ModelConfig& cfg);

/// [B, N, d] -> [B, d], arithmetic mean over tokens.
template <typename T>
Tensor<T> mean_pool(const Tensor<T>& hidden);
template <typename T>
Tensor<T> mean_pool_backward(const Tensor<T>& grad_pooled, std::size_t tokens);

/// argmax per row; ties go to the lowest class index.
template <typename T>
std::vector<int> predict(const Tensor<T>& logits);

template <typename T>
class HarllmModel {
public:
    struct Cache {
        typename Frontend<T>::Cache frontend;
        typename Backbone<T>::Cache backbone;
        std::size_t tokens = 0;
        Tensor<T> pooled;
    };

    HarllmModel(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const noexcept { return cfg_; }

    /// windows [B, W, C] -> logits [B, K]. `rng` drives LoRA dropout and may be
    /// null in eval mode.
    Tensor<T> forward(const Tensor<T>& windows, SeedStream* rng, bool training, Cache* cache = nullptr) const;
    /// Accumulates gradients of every trainable parameter.
    void backward(const Tensor<T>& grad_logits, const Cache& cache);

    std::vector<Param<T>*> trainable_parameters();
    std::vector<Param<T>*> frozen_parameters();
    std::vector<Param<T>*> all_parameters();
    Param<T>* find(const std::string& name);
    void zero_grad();

    Frontend<T>& frontend() noexcept { return frontend_; }
    const Frontend<T>& frontend() const noexcept { return frontend_; }
    Backbone<T>& backbone() noexcept { return backbone_; }
    const Backbone<T>& backbone() const noexcept { return backbone_; }
    Param<T>& head_weight() noexcept { return head_w_; }
    Param<T>& head_bias() noexcept { return head_b_; }

    /// Copies every parameter value into a model of another precision.
    template <typename U>
    HarllmModel<U> cast() const;

private:
    ModelConfig cfg_;
    Frontend<T> frontend_;
    Backbone<T> backbone_;
    Param<T> head_w_; // [d, K]
    Param<T> head_b_; // [K]
};

template <typename T>
template <typename U>
HarllmModel<U> HarllmModel<T>::cast() const {
    HarllmModel<U> out(cfg_, 0);
    auto& self = const_cast<HarllmModel&>(*this);
    auto src = self.all_parameters();
    auto dst = out.all_parameters();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value.template cast<U>();
    return out;
}

} // namespace harllm
