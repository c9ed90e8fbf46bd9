// SPDX-License-Identifier: Apache-2.0
//
// Dense primitives with explicit reverse-mode companions. Every `*_backward`
// ACCUMULATES into the gradient tensors it is handed (pass nullptr to skip one);
// callers zero or allocate them beforehand.
#pragma once

#include <span>
#include <string_view>

#include "harllm/rng.hpp"
#include "harllm/tensor.hpp"

namespace harllm {

/// Throws NumericError naming `op` if any value is NaN or infinite.
template <typename T>
void check_finite(const Tensor<T>& t, std::string_view op);

namespace detail {
/// C[M,N] (+)= op(A) * op(B); A is [M,K] (or [K,M] when trans_a), B is [K,N] (or [N,K]).
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b,
          T* c, bool accumulate);
} // namespace detail

// a[..., m, k] x b[..., k, n] with numpy-style broadcasting of the batch extents.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
void matmul_backward(const Tensor<T>& grad_out, const Tensor<T>& a, const Tensor<T>& b, Tensor<T>* grad_a,
                     Tensor<T>* grad_b);

// x[..., in] * w[in, out] + bias[out]. Weight layout is input-major, as in
// published GPT-2 checkpoints.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias);
template <typename T>
void linear_backward(const Tensor<T>& grad_out, const Tensor<T>& x, const Tensor<T>& w, Tensor<T>* grad_x,
                     Tensor<T>* grad_w, Tensor<T>* grad_bias);

// Cross-correlation along time, stride 1, zero padding keeping T.
// x[B, C_in, T], kernel[C_out, C_in, k] with k odd, bias[C_out].
template <typename T>
Tensor<T> conv1d_same(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias);
template <typename T>
void conv1d_same_backward(const Tensor<T>& grad_out, const Tensor<T>& x, const Tensor<T>& kernel,
                          Tensor<T>* grad_x, Tensor<T>* grad_kernel, Tensor<T>* grad_bias);

enum class Activation { silu, relu, gelu };

// gelu uses the tanh approximation; relu'(0) = 0.
template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind);
template <typename T>
Tensor<T> activation_backward(const Tensor<T>& grad_out, const Tensor<T>& x, Activation kind);

template <typename T>
struct LayerNormCache {
    Tensor<T> normalized; // pre-affine values
    std::vector<T> inv_std;
};

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps = 1e-5,
                     LayerNormCache<T>* cache = nullptr);
template <typename T>
void layer_norm_backward(const Tensor<T>& grad_out, const LayerNormCache<T>& cache, const Tensor<T>& gamma,
                         Tensor<T>* grad_x, Tensor<T>* grad_gamma, Tensor<T>* grad_beta);

// Softmax over the last axis, max-subtracted.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x);
template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& grad_out, const Tensor<T>& y);

template <typename T>
struct CrossEntropy {
    double loss = 0.0;
    Tensor<T> grad_logits; // (softmax - onehot) / B
};

template <typename T>
CrossEntropy<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> targets);

/// Inverted dropout. In training mode each element is zeroed with probability
/// p and survivors are scaled by 1/(1-p); `mask` receives the per-element factor.
/// In eval mode the input is returned unchanged.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, SeedStream& rng, bool training, Tensor<T>* mask = nullptr);

} // namespace harllm
