// SPDX-License-Identifier: Apache-2.0
#include "harllm/frontend.hpp"

#include <string>

namespace harllm {

void FrontendConfig::validate() const {
    if (d_llm == 0 || d_llm % 3 != 0)
        throw ConfigError("frontend: d_llm must be a positive multiple of 3, got " + std::to_string(d_llm));
    if (kernel % 2 == 0) throw ConfigError("frontend: kernel size must be odd, got " + std::to_string(kernel));
    if (frame_length == 0 || encoder_channels == 0 || branch_channels == 0)
        throw ConfigError("frontend: frame length and channel counts must be positive");
}

std::size_t FrontendConfig::param_count() const {
    const std::size_t k = kernel, fe = encoder_channels, fb = branch_channels;
    const std::size_t encoders = 2 * (fe * 3 * k + fe);
    const std::size_t second = fb * fb * k + fb;
    const std::size_t branches = 2 * (fb * fe * k + fb + second) + (fb * 2 * fe * k + fb + second);
    const std::size_t projections = 3 * (fb * frame_length * (d_llm / 3) + d_llm / 3);
    return encoders + branches + projections + 2 * d_llm;
}

const char* branch_name(Branch b) {
    switch (b) {
    case Branch::acc: return "acc";
    case Branch::gyro: return "gyro";
    case Branch::fused: return "union";
    }
    return "?";
}

namespace {

template <typename T>
Tensor<T> normal_tensor(Shape shape, SeedStream rng, double stddev) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.span()) v = static_cast<T>(rng.normal(0.0, stddev));
    return t;
}

template <typename T>
ConvLayer<T> make_conv(const std::string& name, std::size_t cout, std::size_t cin, std::size_t k,
                       const SeedStream& init) {
    return {Param<T>(name + ".weight", normal_tensor<T>({cout, cin, k}, init.substream(name), 0.02), true),
            Param<T>(name + ".bias", Tensor<T>({cout}), true)};
}

// [BN, L, 6] slice of channels [c0, c0+3) -> [BN, 3, L]
template <typename T>
Tensor<T> gather_modality(const Tensor<T>& frames, std::size_t c0) {
    const std::size_t bn = frames.dim(0) * frames.dim(1), len = frames.dim(2), ch = frames.dim(3);
    Tensor<T> out({bn, 3, len});
    for (std::size_t f = 0; f < bn; ++f)
        for (std::size_t t = 0; t < len; ++t)
            for (std::size_t c = 0; c < 3; ++c) out[(f * 3 + c) * len + t] = frames[(f * len + t) * ch + c0 + c];
    return out;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    const std::size_t bn = a.dim(0), ca = a.dim(1), cb = b.dim(1), len = a.dim(2);
    Tensor<T> out({bn, ca + cb, len});
    for (std::size_t f = 0; f < bn; ++f) {
        std::copy_n(a.data() + f * ca * len, ca * len, out.data() + f * (ca + cb) * len);
        std::copy_n(b.data() + f * cb * len, cb * len, out.data() + f * (ca + cb) * len + ca * len);
    }
    return out;
}

} // namespace

template <typename T>
Frontend<T>::Frontend(const FrontendConfig& cfg, SeedStream init) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t k = cfg.kernel, fe = cfg.encoder_channels, fb = cfg.branch_channels;
    const std::size_t third = cfg.d_llm / 3;
    encoders_[0] = make_conv<T>("frontend.encoder.acc", fe, 3, k, init);
    encoders_[1] = make_conv<T>("frontend.encoder.gyro", fe, 3, k, init);
    for (Branch b : kBranches) {
        const auto i = static_cast<std::size_t>(b);
        const std::string base = std::string("frontend.branch.") + branch_name(b);
        const std::size_t cin = b == Branch::fused ? 2 * fe : fe;
        conv1_[i] = make_conv<T>(base + ".conv1", fb, cin, k, init);
        conv2_[i] = make_conv<T>(base + ".conv2", fb, fb, k, init);
        const std::string proj = std::string("frontend.projection.") + branch_name(b);
        proj_w_[i] = Param<T>(proj + ".weight",
                              normal_tensor<T>({fb * cfg.frame_length, third}, init.substream(proj), 0.02), true);
        proj_b_[i] = Param<T>(proj + ".bias", Tensor<T>({third}), true);
    }
    norm_gamma_ = Param<T>("frontend.norm.gamma", Tensor<T>({cfg.d_llm}, T{1}), true);
    norm_beta_ = Param<T>("frontend.norm.beta", Tensor<T>({cfg.d_llm}), true);
}

template <typename T>
Tensor<T> Frontend<T>::encode_channels_first(const Tensor<T>& x, Modality m, Tensor<T>* pre) const {
    const auto& enc = encoders_[m == Modality::acc ? 0 : 1];
    Tensor<T> z = conv1d_same(x, enc.weight.value, enc.bias.value);
    Tensor<T> h = activation(z, Activation::silu);
    if (pre) *pre = std::move(z);
    return h;
}

template <typename T>
Tensor<T> Frontend<T>::modality_encode(const Tensor<T>& frames, Modality m) const {
    if (frames.rank() != 4 || frames.dim(3) != 3)
        throw DimensionError("modality_encode: expected [B, N, L, 3], got " + shape_str(frames.shape()));
    const std::size_t b = frames.dim(0), n = frames.dim(1), len = frames.dim(2);
    Tensor<T> h = encode_channels_first(gather_modality(frames, 0), m, nullptr);
    return std::move(h).reshaped({b, n, cfg_.encoder_channels, len});
}

template <typename T>
Tensor<T> Frontend<T>::branch_process(Branch b, const Tensor<T>& h0, BranchCache* cache) const {
    const auto i = static_cast<std::size_t>(b);
    const std::size_t expected = b == Branch::fused ? 2 * cfg_.encoder_channels : cfg_.encoder_channels;
    if (h0.rank() != 3 || h0.dim(1) != expected)
        throw DimensionError(std::string("branch ") + branch_name(b) + ": expected [BN, " + std::to_string(expected) +
                             ", L], got " + shape_str(h0.shape()));
    Tensor<T> z = conv1d_same(h0, conv1_[i].weight.value, conv1_[i].bias.value);
    Tensor<T> r = activation(z, Activation::relu);
    Tensor<T> out = conv1d_same(r, conv2_[i].weight.value, conv2_[i].bias.value);
    if (cache) {
        cache->input = h0;
        cache->pre_relu = std::move(z);
        cache->hidden = std::move(r);
        cache->output = out;
    }
    return out;
}

template <typename T>
Tensor<T> Frontend<T>::forward(const Tensor<T>& frames, Cache* cache) const {
    if (frames.rank() != 4 || frames.dim(3) != 6 || frames.dim(2) != cfg_.frame_length)
        throw DimensionError("frontend: expected frames [B, N, " + std::to_string(cfg_.frame_length) + ", 6], got " +
                             shape_str(frames.shape()));
    const std::size_t batch = frames.dim(0), n = frames.dim(1), bn = batch * n;
    const std::size_t third = cfg_.d_llm / 3, flat = cfg_.branch_channels * cfg_.frame_length;

    Cache local;
    Cache& c = cache ? *cache : local;
    c.batch = batch;
    c.frames = n;
    c.enc_input[0] = gather_modality(frames, 0);
    c.enc_input[1] = gather_modality(frames, 3);
    const Tensor<T> h0_acc = encode_channels_first(c.enc_input[0], Modality::acc, &c.enc_pre[0]);
    const Tensor<T> h0_gyro = encode_channels_first(c.enc_input[1], Modality::gyro, &c.enc_pre[1]);
    const std::array<Tensor<T>, 3> inputs = {h0_acc, h0_gyro, concat_channels(h0_acc, h0_gyro)};

    Tensor<T> h2({batch, n, cfg_.d_llm});
    for (Branch b : kBranches) {
        const auto i = static_cast<std::size_t>(b);
        Tensor<T> h1 = branch_process(b, inputs[i], &c.branches[i]).reshaped({bn, flat});
        const Tensor<T> proj = linear(h1, proj_w_[i].value, &proj_b_[i].value);
        for (std::size_t r = 0; r < bn; ++r)
            std::copy_n(proj.data() + r * third, third, h2.data() + r * cfg_.d_llm + i * third);
    }
    Tensor<T> tokens = layer_norm(h2, norm_gamma_.value, norm_beta_.value, cfg_.layer_norm_eps, &c.norm);
    c.h2 = std::move(h2);
    return tokens;
}

template <typename T>
Tensor<T> Frontend<T>::backward(const Tensor<T>& grad_tokens, const Cache& c) {
    const std::size_t bn = c.batch * c.frames, third = cfg_.d_llm / 3, len = cfg_.frame_length;
    const std::size_t flat = cfg_.branch_channels * len, fe = cfg_.encoder_channels;

    Tensor<T> grad_h2(c.h2.shape());
    layer_norm_backward(grad_tokens, c.norm, norm_gamma_.value, &grad_h2, &norm_gamma_.grad, &norm_beta_.grad);

    std::array<Tensor<T>, 2> grad_h0 = {Tensor<T>({bn, fe, len}), Tensor<T>({bn, fe, len})};
    for (Branch b : kBranches) {
        const auto i = static_cast<std::size_t>(b);
        const BranchCache& bc = c.branches[i];
        Tensor<T> grad_proj({bn, third});
        for (std::size_t r = 0; r < bn; ++r)
            std::copy_n(grad_h2.data() + r * cfg_.d_llm + i * third, third, grad_proj.data() + r * third);
        const Tensor<T> h1 = bc.output.reshaped({bn, flat});
        Tensor<T> grad_h1({bn, flat});
        linear_backward(grad_proj, h1, proj_w_[i].value, &grad_h1, &proj_w_[i].grad, &proj_b_[i].grad);
        grad_h1.reshape(bc.output.shape());

        Tensor<T> grad_hidden(bc.hidden.shape());
        conv1d_same_backward(grad_h1, bc.hidden, conv2_[i].weight.value, &grad_hidden, &conv2_[i].weight.grad,
                             &conv2_[i].bias.grad);
        const Tensor<T> grad_pre = activation_backward(grad_hidden, bc.pre_relu, Activation::relu);
        Tensor<T> grad_in(bc.input.shape());
        conv1d_same_backward(grad_pre, bc.input, conv1_[i].weight.value, &grad_in, &conv1_[i].weight.grad,
                             &conv1_[i].bias.grad);

        if (b == Branch::fused) {
            for (std::size_t f = 0; f < bn; ++f)
                for (std::size_t m = 0; m < 2; ++m) {
                    const T* src = grad_in.data() + (f * 2 * fe + m * fe) * len;
                    T* dst = grad_h0[m].data() + f * fe * len;
                    for (std::size_t j = 0; j < fe * len; ++j) dst[j] += src[j];
                }
        } else {
            grad_h0[i] += grad_in;
        }
    }

    const std::size_t ch = 6;
    Tensor<T> grad_frames({c.batch, c.frames, len, ch});
    for (std::size_t m = 0; m < 2; ++m) {
        const Tensor<T> grad_pre = activation_backward(grad_h0[m], c.enc_pre[m], Activation::silu);
        Tensor<T> grad_x(c.enc_input[m].shape());
        conv1d_same_backward(grad_pre, c.enc_input[m], encoders_[m].weight.value, &grad_x, &encoders_[m].weight.grad,
                             &encoders_[m].bias.grad);
        for (std::size_t f = 0; f < bn; ++f)
            for (std::size_t t = 0; t < len; ++t)
                for (std::size_t k = 0; k < 3; ++k)
                    grad_frames[(f * len + t) * ch + m * 3 + k] = grad_x[(f * 3 + k) * len + t];
    }
    return grad_frames;
}

template <typename T>
std::vector<Param<T>*> Frontend<T>::parameters() {
    std::vector<Param<T>*> out;
    for (auto& e : encoders_) out.insert(out.end(), {&e.weight, &e.bias});
    for (std::size_t i = 0; i < 3; ++i)
        out.insert(out.end(), {&conv1_[i].weight, &conv1_[i].bias, &conv2_[i].weight, &conv2_[i].bias});
    for (std::size_t i = 0; i < 3; ++i) out.insert(out.end(), {&proj_w_[i], &proj_b_[i]});
    out.insert(out.end(), {&norm_gamma_, &norm_beta_});
    return out;
}

template <typename T>
std::vector<const Param<T>*> Frontend<T>::parameters() const {
    auto mut = const_cast<Frontend*>(this)->parameters();
    return {mut.begin(), mut.end()};
}

template class Frontend<float>;
template class Frontend<double>;

} // namespace harllm
