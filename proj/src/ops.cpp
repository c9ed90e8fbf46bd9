// SPDX-License-Identifier: Apache-2.0
#include "harllm/ops.hpp"

#include <cmath>
#include <string>

namespace harllm {

template <typename T>
void check_finite(const Tensor<T>& t, std::string_view op) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (!std::isfinite(t[i]))
            throw NumericError(std::string(op) + ": non-finite value at flat index " + std::to_string(i));
    }
}

namespace detail {

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b,
          T* c, bool accumulate) {
    if (!accumulate) std::fill(c, c + m * n, T{0});
    if (!trans_a && !trans_b) {
        for (std::size_t i = 0; i < m; ++i) {
            T* crow = c + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const T av = a[i * k + p];
                const T* brow = b + p * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else if (!trans_a && trans_b) {
        for (std::size_t i = 0; i < m; ++i) {
            const T* arow = a + i * k;
            for (std::size_t j = 0; j < n; ++j) {
                const T* brow = b + j * k;
                T acc{0};
                for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
                c[i * n + j] += acc;
            }
        }
    } else if (trans_a && !trans_b) {
        for (std::size_t p = 0; p < k; ++p) {
            const T* arow = a + p * m;
            const T* brow = b + p * n;
            for (std::size_t i = 0; i < m; ++i) {
                const T av = arow[i];
                T* crow = c + i * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                T acc{0};
                for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[j * k + p];
                c[i * n + j] += acc;
            }
    }
}

} // namespace detail

namespace {

struct BatchPlan {
    Shape out_batch;
    std::vector<std::size_t> a_offsets, b_offsets; // per output batch element, in matrices
};

BatchPlan plan_batches(const Shape& a, const Shape& b) {
    const std::size_t ra = a.size() - 2, rb = b.size() - 2;
    const std::size_t r = std::max(ra, rb);
    Shape out(r), ea(r, 1), eb(r, 1);
    for (std::size_t i = 0; i < ra; ++i) ea[r - ra + i] = a[i];
    for (std::size_t i = 0; i < rb; ++i) eb[r - rb + i] = b[i];
    for (std::size_t i = 0; i < r; ++i) {
        if (ea[i] != eb[i] && ea[i] != 1 && eb[i] != 1)
            throw DimensionError("matmul: batch extents not broadcastable: " + shape_str(a) + " x " +
                                 shape_str(b));
        out[i] = std::max(ea[i], eb[i]);
    }
    BatchPlan plan{out, {}, {}};
    const std::size_t total = shape_numel(out);
    plan.a_offsets.resize(total);
    plan.b_offsets.resize(total);
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t rem = flat, oa = 0, ob = 0, sa = 1, sb = 1;
        for (std::size_t d = r; d-- > 0;) {
            const std::size_t idx = rem % out[d];
            rem /= out[d];
            if (ea[d] != 1) oa += idx * sa;
            if (eb[d] != 1) ob += idx * sb;
            sa *= ea[d];
            sb *= eb[d];
        }
        plan.a_offsets[flat] = oa;
        plan.b_offsets[flat] = ob;
    }
    return plan;
}

void require_matrix_operands(const Shape& a, const Shape& b) {
    if (a.size() < 2 || b.size() < 2 || a[a.size() - 1] != b[b.size() - 2])
        throw DimensionError("matmul: incompatible shapes " + shape_str(a) + " x " + shape_str(b));
}

} // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require_matrix_operands(a.shape(), b.shape());
    const std::size_t m = a.dim_back(1), k = a.dim_back(0), n = b.dim_back(0);
    const BatchPlan plan = plan_batches(a.shape(), b.shape());
    Shape out_shape = plan.out_batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor<T> out(out_shape);
    for (std::size_t i = 0; i < plan.a_offsets.size(); ++i)
        detail::gemm(false, false, m, n, k, a.data() + plan.a_offsets[i] * m * k,
                     b.data() + plan.b_offsets[i] * k * n, out.data() + i * m * n, false);
    check_finite(out, "matmul");
    return out;
}

template <typename T>
void matmul_backward(const Tensor<T>& grad_out, const Tensor<T>& a, const Tensor<T>& b, Tensor<T>* grad_a,
                     Tensor<T>* grad_b) {
    require_matrix_operands(a.shape(), b.shape());
    const std::size_t m = a.dim_back(1), k = a.dim_back(0), n = b.dim_back(0);
    const BatchPlan plan = plan_batches(a.shape(), b.shape());
    for (std::size_t i = 0; i < plan.a_offsets.size(); ++i) {
        const T* g = grad_out.data() + i * m * n;
        if (grad_a)
            detail::gemm(false, true, m, k, n, g, b.data() + plan.b_offsets[i] * k * n,
                         grad_a->data() + plan.a_offsets[i] * m * k, true);
        if (grad_b)
            detail::gemm(true, false, k, n, m, a.data() + plan.a_offsets[i] * m * k, g,
                         grad_b->data() + plan.b_offsets[i] * k * n, true);
    }
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias) {
    if (w.rank() != 2 || x.rank() < 1 || x.dim_back(0) != w.dim(0))
        throw DimensionError("linear: incompatible shapes " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
    const std::size_t in = w.dim(0), out_dim = w.dim(1), rows = x.size() / in;
    Shape out_shape = x.shape();
    out_shape.back() = out_dim;
    Tensor<T> y(out_shape);
    detail::gemm(false, false, rows, out_dim, in, x.data(), w.data(), y.data(), false);
    if (bias) {
        if (bias->size() != out_dim)
            throw DimensionError("linear: bias " + shape_str(bias->shape()) + " vs weight " + shape_str(w.shape()));
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < out_dim; ++j) y[r * out_dim + j] += (*bias)[j];
    }
    check_finite(y, "linear");
    return y;
}

template <typename T>
void linear_backward(const Tensor<T>& grad_out, const Tensor<T>& x, const Tensor<T>& w, Tensor<T>* grad_x,
                     Tensor<T>* grad_w, Tensor<T>* grad_bias) {
    const std::size_t in = w.dim(0), out_dim = w.dim(1), rows = x.size() / in;
    if (grad_x) detail::gemm(false, true, rows, in, out_dim, grad_out.data(), w.data(), grad_x->data(), true);
    if (grad_w) detail::gemm(true, false, in, out_dim, rows, x.data(), grad_out.data(), grad_w->data(), true);
    if (grad_bias)
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < out_dim; ++j) (*grad_bias)[j] += grad_out[r * out_dim + j];
}

namespace {

template <typename T>
void check_conv_shapes(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias) {
    if (kernel.rank() != 3) throw DimensionError("conv1d: kernel must be [C_out, C_in, k], got " + shape_str(kernel.shape()));
    if (kernel.dim(2) % 2 == 0)
        throw ConfigError("conv1d: kernel size must be odd, got " + std::to_string(kernel.dim(2)));
    if (x.rank() != 3 || x.dim(1) != kernel.dim(1))
        throw DimensionError("conv1d: input " + shape_str(x.shape()) + " vs kernel " + shape_str(kernel.shape()));
    if (bias.size() != kernel.dim(0))
        throw DimensionError("conv1d: bias " + shape_str(bias.shape()) + " vs kernel " + shape_str(kernel.shape()));
}

} // namespace

template <typename T>
Tensor<T> conv1d_same(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias) {
    check_conv_shapes(x, kernel, bias);
    const std::size_t batch = x.dim(0), cin = x.dim(1), len = x.dim(2);
    const std::size_t cout = kernel.dim(0), k = kernel.dim(2);
    const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(k / 2);
    Tensor<T> y({batch, cout, len});
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t co = 0; co < cout; ++co) {
            T* yrow = y.data() + (b * cout + co) * len;
            std::fill(yrow, yrow + len, bias[co]);
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const T* xrow = x.data() + (b * cin + ci) * len;
                const T* w = kernel.data() + (co * cin + ci) * k;
                for (std::size_t j = 0; j < k; ++j) {
                    // y[t] += w[j] * x[t + j - half] over the valid t range
                    const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - half;
                    const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -shift);
                    const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(len),
                                                                       static_cast<std::ptrdiff_t>(len) - shift);
                    const T wj = w[j];
                    for (std::ptrdiff_t t = t0; t < t1; ++t) yrow[t] += wj * xrow[t + shift];
                }
            }
        }
    }
    check_finite(y, "conv1d_same");
    return y;
}

template <typename T>
void conv1d_same_backward(const Tensor<T>& grad_out, const Tensor<T>& x, const Tensor<T>& kernel,
                          Tensor<T>* grad_x, Tensor<T>* grad_kernel, Tensor<T>* grad_bias) {
    const std::size_t batch = x.dim(0), cin = x.dim(1), len = x.dim(2);
    const std::size_t cout = kernel.dim(0), k = kernel.dim(2);
    const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(k / 2);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t co = 0; co < cout; ++co) {
            const T* g = grad_out.data() + (b * cout + co) * len;
            if (grad_bias) {
                T acc{0};
                for (std::size_t t = 0; t < len; ++t) acc += g[t];
                (*grad_bias)[co] += acc;
            }
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const T* xrow = x.data() + (b * cin + ci) * len;
                const T* w = kernel.data() + (co * cin + ci) * k;
                for (std::size_t j = 0; j < k; ++j) {
                    const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - half;
                    const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -shift);
                    const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(len),
                                                                       static_cast<std::ptrdiff_t>(len) - shift);
                    if (grad_kernel) {
                        T acc{0};
                        for (std::ptrdiff_t t = t0; t < t1; ++t) acc += g[t] * xrow[t + shift];
                        (*grad_kernel)[(co * cin + ci) * k + j] += acc;
                    }
                    if (grad_x) {
                        T* gx = grad_x->data() + (b * cin + ci) * len;
                        const T wj = w[j];
                        for (std::ptrdiff_t t = t0; t < t1; ++t) gx[t + shift] += wj * g[t];
                    }
                }
            }
        }
    }
}

namespace {

constexpr double kGeluC = 0.7978845608028654; // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

template <typename T>
T sigmoid(T v) {
    return T{1} / (T{1} + std::exp(-v));
}

} // namespace

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T v = x[i];
        switch (kind) {
        case Activation::silu: y[i] = v * sigmoid(v); break;
        case Activation::relu: y[i] = v > T{0} ? v : T{0}; break;
        case Activation::gelu: {
            const T u = static_cast<T>(kGeluC) * (v + static_cast<T>(kGeluA) * v * v * v);
            y[i] = T{0.5} * v * (T{1} + std::tanh(u));
            break;
        }
        }
    }
    check_finite(y, "activation");
    return y;
}

template <typename T>
Tensor<T> activation_backward(const Tensor<T>& grad_out, const Tensor<T>& x, Activation kind) {
    Tensor<T> gx(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T v = x[i];
        T d{0};
        switch (kind) {
        case Activation::silu: {
            const T s = sigmoid(v);
            d = s * (T{1} + v * (T{1} - s));
            break;
        }
        case Activation::relu: d = v > T{0} ? T{1} : T{0}; break;
        case Activation::gelu: {
            const T c = static_cast<T>(kGeluC), a = static_cast<T>(kGeluA);
            const T th = std::tanh(c * (v + a * v * v * v));
            d = T{0.5} * (T{1} + th) + T{0.5} * v * (T{1} - th * th) * c * (T{1} + T{3} * a * v * v);
            break;
        }
        }
        gx[i] = grad_out[i] * d;
    }
    return gx;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps,
                     LayerNormCache<T>* cache) {
    const std::size_t d = x.dim_back(0);
    if (gamma.size() != d || beta.size() != d)
        throw DimensionError("layer_norm: input " + shape_str(x.shape()) + " vs gamma " + shape_str(gamma.shape()) +
                             " / beta " + shape_str(beta.shape()));
    const std::size_t rows = x.size() / d;
    Tensor<T> y(x.shape());
    Tensor<T> normalized(x.shape());
    std::vector<T> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.data() + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += xr[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= static_cast<double>(d);
        const double rs = 1.0 / std::sqrt(var + eps);
        inv_std[r] = static_cast<T>(rs);
        for (std::size_t j = 0; j < d; ++j) {
            const T n = static_cast<T>((xr[j] - mean) * rs);
            normalized[r * d + j] = n;
            y[r * d + j] = n * gamma[j] + beta[j];
        }
    }
    check_finite(y, "layer_norm");
    if (cache) {
        cache->normalized = std::move(normalized);
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

template <typename T>
void layer_norm_backward(const Tensor<T>& grad_out, const LayerNormCache<T>& cache, const Tensor<T>& gamma,
                         Tensor<T>* grad_x, Tensor<T>* grad_gamma, Tensor<T>* grad_beta) {
    const std::size_t d = gamma.size();
    const std::size_t rows = grad_out.size() / d;
    std::vector<T> gn(d);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* g = grad_out.data() + r * d;
        const T* n = cache.normalized.data() + r * d;
        double mean_gn = 0.0, mean_gn_n = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            gn[j] = g[j] * gamma[j];
            mean_gn += gn[j];
            mean_gn_n += gn[j] * n[j];
            if (grad_gamma) (*grad_gamma)[j] += g[j] * n[j];
            if (grad_beta) (*grad_beta)[j] += g[j];
        }
        if (!grad_x) continue;
        mean_gn /= static_cast<double>(d);
        mean_gn_n /= static_cast<double>(d);
        T* gx = grad_x->data() + r * d;
        for (std::size_t j = 0; j < d; ++j)
            gx[j] += static_cast<T>(cache.inv_std[r] * (gn[j] - mean_gn - n[j] * mean_gn_n));
    }
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
    const std::size_t d = x.dim_back(0), rows = x.size() / d;
    Tensor<T> y(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.data() + r * d;
        T* yr = y.data() + r * d;
        const T mx = *std::max_element(xr, xr + d);
        T sum{0};
        for (std::size_t j = 0; j < d; ++j) sum += (yr[j] = std::exp(xr[j] - mx));
        for (std::size_t j = 0; j < d; ++j) yr[j] /= sum;
    }
    return y;
}

template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& grad_out, const Tensor<T>& y) {
    const std::size_t d = y.dim_back(0), rows = y.size() / d;
    Tensor<T> gx(y.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* g = grad_out.data() + r * d;
        const T* yr = y.data() + r * d;
        T dot{0};
        for (std::size_t j = 0; j < d; ++j) dot += g[j] * yr[j];
        for (std::size_t j = 0; j < d; ++j) gx[r * d + j] = yr[j] * (g[j] - dot);
    }
    return gx;
}

template <typename T>
CrossEntropy<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> targets) {
    if (logits.rank() != 2 || logits.dim(0) != targets.size())
        throw DimensionError("softmax_cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                             std::to_string(targets.size()) + " targets");
    const std::size_t batch = logits.dim(0), k = logits.dim(1);
    CrossEntropy<T> out{0.0, Tensor<T>(logits.shape())};
    for (std::size_t b = 0; b < batch; ++b) {
        const int t = targets[b];
        if (t < 0 || static_cast<std::size_t>(t) >= k)
            throw IndexError("softmax_cross_entropy: target " + std::to_string(t) + " outside [0, " +
                             std::to_string(k) + ")");
        const T* row = logits.data() + b * k;
        const double mx = *std::max_element(row, row + k);
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
        const double log_z = mx + std::log(sum);
        out.loss += log_z - row[t];
        for (std::size_t j = 0; j < k; ++j) {
            const double p = std::exp(row[j] - log_z);
            out.grad_logits[b * k + j] =
                static_cast<T>((p - (static_cast<std::size_t>(t) == j ? 1.0 : 0.0)) / static_cast<double>(batch));
        }
    }
    out.loss /= static_cast<double>(batch);
    if (!std::isfinite(out.loss)) throw NumericError("softmax_cross_entropy: non-finite loss");
    return out;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, SeedStream& rng, bool training, Tensor<T>* mask) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: probability must lie in [0, 1), got " + std::to_string(p));
    if (!training || p == 0.0) {
        if (mask) *mask = Tensor<T>(x.shape(), T{1});
        return x;
    }
    const T scale = static_cast<T>(1.0 / (1.0 - p));
    Tensor<T> m(x.shape());
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        m[i] = rng.uniform() < p ? T{0} : scale;
        y[i] = x[i] * m[i];
    }
    if (mask) *mask = std::move(m);
    return y;
}

#define HARLLM_INSTANTIATE_OPS(T)                                                                                 \
    template void check_finite<T>(const Tensor<T>&, std::string_view);                                           \
    template void detail::gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool); \
    template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                             \
    template void matmul_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*, Tensor<T>*); \
    template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);                           \
    template void linear_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*, Tensor<T>*, \
                                     Tensor<T>*);                                                                 \
    template Tensor<T> conv1d_same<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                      \
    template void conv1d_same_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*,       \
                                          Tensor<T>*, Tensor<T>*);                                                \
    template Tensor<T> activation<T>(const Tensor<T>&, Activation);                                               \
    template Tensor<T> activation_backward<T>(const Tensor<T>&, const Tensor<T>&, Activation);                    \
    template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double,                \
                                     LayerNormCache<T>*);                                                         \
    template void layer_norm_backward<T>(const Tensor<T>&, const LayerNormCache<T>&, const Tensor<T>&, Tensor<T>*, \
                                         Tensor<T>*, Tensor<T>*);                                                 \
    template Tensor<T> softmax<T>(const Tensor<T>&);                                                              \
    template Tensor<T> softmax_backward<T>(const Tensor<T>&, const Tensor<T>&);                                   \
    template CrossEntropy<T> softmax_cross_entropy<T>(const Tensor<T>&, std::span<const int>);                    \
    template Tensor<T> dropout<T>(const Tensor<T>&, double, SeedStream&, bool, Tensor<T>*);

HARLLM_INSTANTIATE_OPS(float)
HARLLM_INSTANTIATE_OPS(double)

} // namespace harllm
