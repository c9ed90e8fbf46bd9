// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "harllm/model.hpp"

namespace harllm {

struct CheckResult {
    std::string name;
    bool passed = false;
    double measured = 0.0;
    double tolerance = 0.0;
    std::string detail;
};

/// 1 layer, d=12, 2 heads, W=8, L=4 (N=2), 6 channels, 2 classes.
ModelConfig gradcheck_toy_config();

/// Central differences on every trainable parameter of a 64-bit model with
/// randomised adapters, against the analytic backward pass.
CheckResult check_gradients(const ModelConfig& cfg, std::uint64_t seed, double tolerance = 1e-3);

/// Fresh adapters must leave eval-mode logits bit-identical to an adapter-free
/// model with the same base weights.
CheckResult check_lora_zero_init(const ModelConfig& cfg, std::uint64_t seed, std::size_t batch = 4);

/// Adapter forward vs. forward with W + s (BA)^T folded into the base weights,
/// max abs logit difference over `inputs` random windows.
CheckResult check_lora_merge(const ModelConfig& cfg, std::uint64_t seed, std::size_t inputs = 50,
                             double tolerance = 1e-5);

/// Copy of `model` with every adapter folded into its base weight and removed.
template <typename T>
HarllmModel<T> merge_adapters(const HarllmModel<T>& model);

/// Fills every adapter B with normal(0, sd) so the adapter path is active.
template <typename T>
void randomize_adapters(HarllmModel<T>& model, std::uint64_t seed, double sd = 0.05);

} // namespace harllm
