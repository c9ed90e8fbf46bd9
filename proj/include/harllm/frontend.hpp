// SPDX-License-Identifier: Apache-2.0
//
// Convolutional projection from sensor frames to backbone tokens.
//
// Per frame (all convolutions run inside the frame, along time):
//   acc/gyro encoders   H0_m = SiLU(conv(X_m))              m in {acc, gyro}
//   fusion              H0_union = [H0_acc ; H0_gyro]        (channel concat)
//   branch stacks       H1_b = conv2(ReLU(conv1(H0_b)))      b in {acc, gyro, union}
//   projection          flatten(H1_b) * P_b + bias  -> d/3
//   tokens              E = LayerNorm([acc ; gyro ; union])  -> d
#pragma once

#include <array>
#include <vector>

#include "harllm/ops.hpp"
#include "harllm/rng.hpp"
#include "harllm/tensor.hpp"

namespace harllm {

struct FrontendConfig {
    std::size_t frame_length = 16;
    std::size_t d_llm = 768;
    std::size_t kernel = 3;
    std::size_t encoder_channels = 32;
    std::size_t branch_channels = 64;
    double layer_norm_eps = 1e-5;

    void validate() const;
    /// Closed-form trainable parameter count.
    std::size_t param_count() const;
};

enum class Modality { acc, gyro };
enum class Branch { acc = 0, gyro = 1, fused = 2 }; // fused is the "union" branch

inline constexpr std::array<Branch, 3> kBranches = {Branch::acc, Branch::gyro, Branch::fused};
const char* branch_name(Branch b);

template <typename T>
struct ConvLayer {
    Param<T> weight; // [C_out, C_in, k]
    Param<T> bias;   // [C_out]
};

template <typename T>
class Frontend {
public:
    struct BranchCache {
        Tensor<T> input;    // [BN, C_in, L]
        Tensor<T> pre_relu; // [BN, F_branch, L]
        Tensor<T> hidden;   // ReLU output
        Tensor<T> output;   // H1, [BN, F_branch, L]
    };

    struct Cache {
        std::size_t batch = 0, frames = 0;
        std::array<Tensor<T>, 2> enc_input; // [BN, 3, L]
        std::array<Tensor<T>, 2> enc_pre;   // pre-SiLU
        std::array<BranchCache, 3> branches;
        Tensor<T> h2; // [B, N, d] before layer norm
        LayerNormCache<T> norm;
    };

    Frontend(const FrontendConfig& cfg, SeedStream init);

    const FrontendConfig& config() const noexcept { return cfg_; }

    /// frames [B, N, L, 6] -> tokens [B, N, d_llm]
    Tensor<T> forward(const Tensor<T>& frames, Cache* cache = nullptr) const;
    /// Accumulates parameter gradients; returns the gradient w.r.t. the frames.
    Tensor<T> backward(const Tensor<T>& grad_tokens, const Cache& cache);

    /// frames [B, N, L, 3] -> [B, N, F_enc, L]
    Tensor<T> modality_encode(const Tensor<T>& frames, Modality m) const;
    /// [BN, C_in, L] -> [BN, F_branch, L]
    Tensor<T> branch_process(Branch b, const Tensor<T>& h0, BranchCache* cache = nullptr) const;

    std::vector<Param<T>*> parameters();
    std::vector<const Param<T>*> parameters() const;

private:
    Tensor<T> encode_channels_first(const Tensor<T>& x, Modality m, Tensor<T>* pre) const;

    FrontendConfig cfg_;
    std::array<ConvLayer<T>, 2> encoders_;
    std::array<ConvLayer<T>, 3> conv1_, conv2_;
    std::array<Param<T>, 3> proj_w_, proj_b_; // [F_branch * L, d/3], [d/3]
    Param<T> norm_gamma_, norm_beta_;
};

} // namespace harllm
