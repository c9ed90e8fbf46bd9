// SPDX-License-Identifier: Apache-2.0
//
// GPT-2 style encoder stack over frontend tokens. Base weights are frozen; the
// query/key/value projections of every layer carry a LoRA adapter:
//
//   y = x W + bias + (alpha / r) * dropout(x) A^T B^T
//
// W is stored input-major [d_in, d_out] as in published GPT-2 checkpoints,
// A is [r, d_in] and B is [d_out, r].
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "harllm/ops.hpp"
#include "harllm/rng.hpp"
#include "harllm/tensor.hpp"
#include "harllm/tensor_archive.hpp"

namespace harllm {

struct BackboneConfig {
    std::size_t n_layers = 12;
    std::size_t d_model = 768;
    std::size_t n_heads = 12;
    std::size_t d_ff = 0; // 0 means 4 * d_model
    std::size_t max_positions = 1024;
    bool causal = true;
    /// Token-embedding rows. Unused by the forward pass (inputs are already
    /// embeddings) but part of the pretrained parameter total; 0 omits the table.
    std::size_t vocab_size = 0;
    double layer_norm_eps = 1e-5;

    std::size_t ff_dim() const noexcept { return d_ff ? d_ff : 4 * d_model; }
    void validate() const;
    /// Closed-form count of frozen base parameters.
    std::size_t base_param_count() const;

    static BackboneConfig gpt2_small();
};

struct LoraConfig {
    std::size_t rank = 16;
    double alpha = 32.0;
    double dropout = 0.05;
    std::vector<std::string> targets = {"query", "key", "value"};

    double scale() const noexcept { return rank ? alpha / static_cast<double>(rank) : 0.0; }
    bool targets_projection(const std::string& name) const;
    void validate() const;
};

/// Sum over layers and targeted projections of r * (d_in + d_out).
std::size_t lora_param_count(const BackboneConfig& backbone, const LoraConfig& lora);

class SequenceLengthError : public DimensionError {
public:
    using DimensionError::DimensionError;
};

template <typename T>
struct LoraAdapter {
    Param<T> a; // [r, d_in], normal(0, 0.02)
    Param<T> b; // [d_out, r], zero-initialised
};

template <typename T>
struct LoraCache {
    Tensor<T> input;  // [M, d_in]
    Tensor<T> mask;   // dropout factors
    Tensor<T> dropped;
    Tensor<T> low;    // dropped * A^T, [M, r]
};

/// x[..., d_in] through the frozen projection plus the adapter path.
/// `adapter` may be null (plain projection). Throws ConfigError for an adapter
/// with rank 0.
template <typename T>
Tensor<T> lora_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                       const LoraAdapter<T>* adapter, const LoraConfig& cfg, SeedStream& rng, bool training,
                       LoraCache<T>* cache = nullptr);

/// Accumulates adapter gradients and `grad_x`. The frozen weight gets none.
template <typename T>
void lora_backward(const Tensor<T>& grad_y, const Tensor<T>& weight, LoraAdapter<T>* adapter, const LoraConfig& cfg,
                   const LoraCache<T>& cache, Tensor<T>* grad_x);

/// W + (alpha/r) (B A)^T in the input-major layout; `weight` is untouched.
template <typename T>
Tensor<T> lora_merge(const Tensor<T>& weight, const LoraAdapter<T>& adapter, const LoraConfig& cfg);

template <typename T>
struct BlockParams {
    Param<T> ln1_gamma, ln1_beta;
    Param<T> query_w, query_b, key_w, key_b, value_w, value_b;
    Param<T> out_w, out_b;
    Param<T> ln2_gamma, ln2_beta;
    Param<T> fc_w, fc_b, proj_w, proj_b;
    std::optional<LoraAdapter<T>> lora_query, lora_key, lora_value;
};

template <typename T>
struct BlockCache {
    std::size_t batch = 0, seq = 0;
    LayerNormCache<T> ln1, ln2;
    Tensor<T> attn_in;                // ln1 output, [B*N, d]
    LoraCache<T> q_cache, k_cache, v_cache;
    Tensor<T> q, k, v;                // [B, N, d]
    Tensor<T> probs;                  // [B, H, N, N]
    Tensor<T> attn_concat;            // [B*N, d]
    Tensor<T> mlp_in;                 // ln2 output
    Tensor<T> fc_pre;                 // [B*N, ff]
    Tensor<T> fc_act;
};

/// Pre-norm block: x + Attn(LN1(x)), then + MLP(LN2(.)).
template <typename T>
Tensor<T> block_forward(const Tensor<T>& x, const BlockParams<T>& p, const BackboneConfig& cfg,
                        const LoraConfig& lora, SeedStream& rng, bool training, BlockCache<T>* cache = nullptr);
template <typename T>
Tensor<T> block_backward(const Tensor<T>& grad_out, BlockParams<T>& p, const BackboneConfig& cfg,
                         const LoraConfig& lora, const BlockCache<T>& cache);

template <typename T>
class Backbone {
public:
    struct Cache {
        std::vector<BlockCache<T>> blocks;
        LayerNormCache<T> final_norm;
    };

    Backbone(const BackboneConfig& cfg, const LoraConfig& lora, SeedStream init);

    const BackboneConfig& config() const noexcept { return cfg_; }
    const LoraConfig& lora_config() const noexcept { return lora_; }

    /// tokens [B, N, d] -> hidden states [B, N, d]
    Tensor<T> forward(const Tensor<T>& tokens, SeedStream& rng, bool training, Cache* cache = nullptr) const;
    /// Accumulates adapter gradients; returns the gradient w.r.t. the tokens.
    Tensor<T> backward(const Tensor<T>& grad_hidden, const Cache& cache);

    std::vector<Param<T>*> base_parameters();
    std::vector<Param<T>*> adapter_parameters();
    BlockParams<T>& layer(std::size_t i) { return layers_.at(i); }
    const BlockParams<T>& layer(std::size_t i) const { return layers_.at(i); }

private:
    BackboneConfig cfg_;
    LoraConfig lora_;
    Param<T> position_embedding_; // [max_positions, d]
    std::optional<Param<T>> token_embedding_;
    std::vector<BlockParams<T>> layers_;
    Param<T> final_gamma_, final_beta_;
};

/// Maps a published GPT-2 tensor name ("h.3.attn.c_proj.weight", optionally
/// prefixed "transformer.") to its `backbone.*` name. Fused "c_attn" entries
/// map to the "backbone.layers.<i>.attn.qkv.{weight,bias}" placeholder; returns
/// nullopt for tensors the backbone does not use (attention mask buffers).
std::optional<std::string> map_gpt2_name(const std::string& name);

/// Splits a fused [d, 3d] (or [3d] bias) tensor into q, k, v column blocks.
std::vector<ArchiveTensor> split_fused_qkv(const ArchiveTensor& fused);

/// Loads base weights into `backbone`, accepting native `backbone.*` names or
/// GPT-2 names. Every base tensor must be present with the configured shape.
template <typename T>
void load_backbone_weights(Backbone<T>& backbone, const TensorMap& tensors);

} // namespace harllm
