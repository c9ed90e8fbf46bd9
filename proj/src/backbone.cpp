// SPDX-License-Identifier: Apache-2.0
#include "harllm/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <regex>
#include <string>

namespace harllm {

void BackboneConfig::validate() const {
    if (n_layers == 0 || d_model == 0 || n_heads == 0) throw ConfigError("backbone: layers, width and heads must be positive");
    if (d_model % n_heads != 0)
        throw ConfigError("backbone: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                          std::to_string(n_heads));
    if (max_positions == 0) throw ConfigError("backbone: max_positions must be positive");
}

std::size_t BackboneConfig::base_param_count() const {
    const std::size_t d = d_model, ff = ff_dim();
    const std::size_t per_layer = 4 * d                 // two layer norms
                                  + 4 * (d * d + d)     // q, k, v, out
                                  + (d * ff + ff) + (ff * d + d);
    return n_layers * per_layer + 2 * d + max_positions * d + vocab_size * d;
}

BackboneConfig BackboneConfig::gpt2_small() {
    BackboneConfig c;
    c.n_layers = 12;
    c.d_model = 768;
    c.n_heads = 12;
    c.max_positions = 1024;
    c.vocab_size = 50257;
    return c;
}

bool LoraConfig::targets_projection(const std::string& name) const {
    return std::find(targets.begin(), targets.end(), name) != targets.end();
}

void LoraConfig::validate() const {
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("lora: dropout must lie in [0, 1)");
    for (const auto& t : targets)
        if (t != "query" && t != "key" && t != "value")
            throw ConfigError("lora: unknown target projection '" + t + "' (expected query, key or value)");
    if (rank > 0 && !(alpha > 0.0)) throw ConfigError("lora: alpha must be positive");
}

std::size_t lora_param_count(const BackboneConfig& backbone, const LoraConfig& lora) {
    const std::size_t d = backbone.d_model;
    return backbone.n_layers * lora.targets.size() * lora.rank * (d + d);
}

namespace {

template <typename T>
Tensor<T> normal_tensor(Shape shape, SeedStream rng, double stddev) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.span()) v = static_cast<T>(rng.normal(0.0, stddev));
    return t;
}

template <typename T>
Param<T> frozen(std::string name, Tensor<T> value) {
    return Param<T>(std::move(name), std::move(value), false);
}

template <typename T>
void require_adapter_shapes(const Tensor<T>& weight, const LoraAdapter<T>& adapter, std::size_t rank) {
    const std::size_t din = weight.dim(0), dout = weight.dim(1);
    const Shape a{rank, din}, b{dout, rank};
    if (adapter.a.value.shape() != a || adapter.b.value.shape() != b)
        throw DimensionError("lora: adapter A " + shape_str(adapter.a.value.shape()) + " / B " +
                             shape_str(adapter.b.value.shape()) + " do not fit weight " + shape_str(weight.shape()) +
                             " at rank " + std::to_string(rank));
}

} // namespace

template <typename T>
Tensor<T> lora_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                       const LoraAdapter<T>* adapter, const LoraConfig& cfg, SeedStream& rng, bool training,
                       LoraCache<T>* cache) {
    Tensor<T> y = linear(x, weight, bias);
    if (cache) cache->input = x;
    if (!adapter) return y;
    if (cfg.rank == 0) throw ConfigError("lora: adapter present but rank is 0");
    require_adapter_shapes(weight, *adapter, cfg.rank);

    const std::size_t din = weight.dim(0), dout = weight.dim(1), rows = x.size() / din, r = cfg.rank;
    Tensor<T> mask;
    Tensor<T> dropped = dropout(x, cfg.dropout, rng, training, &mask);
    Tensor<T> low({rows, r});
    detail::gemm(false, true, rows, r, din, dropped.data(), adapter->a.value.data(), low.data(), false);
    Tensor<T> delta(y.shape());
    detail::gemm(false, true, rows, dout, r, low.data(), adapter->b.value.data(), delta.data(), false);
    const T s = static_cast<T>(cfg.scale());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += s * delta[i];
    check_finite(y, "lora_forward");
    if (cache) {
        cache->mask = std::move(mask);
        cache->dropped = std::move(dropped);
        cache->low = std::move(low);
    }
    return y;
}

template <typename T>
void lora_backward(const Tensor<T>& grad_y, const Tensor<T>& weight, LoraAdapter<T>* adapter, const LoraConfig& cfg,
                   const LoraCache<T>& cache, Tensor<T>* grad_x) {
    linear_backward<T>(grad_y, cache.input, weight, grad_x, nullptr, nullptr);
    if (!adapter) return;
    const std::size_t din = weight.dim(0), dout = weight.dim(1), rows = cache.input.size() / din, r = cfg.rank;
    const T s = static_cast<T>(cfg.scale());

    Tensor<T> grad_low({rows, r});
    detail::gemm(false, false, rows, r, dout, grad_y.data(), adapter->b.value.data(), grad_low.data(), false);
    for (auto& v : grad_low.span()) v *= s;

    Tensor<T> grad_b({dout, r});
    detail::gemm(true, false, dout, r, rows, grad_y.data(), cache.low.data(), grad_b.data(), false);
    for (std::size_t i = 0; i < grad_b.size(); ++i) adapter->b.grad[i] += s * grad_b[i];

    detail::gemm(true, false, r, din, rows, grad_low.data(), cache.dropped.data(), adapter->a.grad.data(), true);

    if (grad_x) {
        Tensor<T> grad_dropped({rows, din});
        detail::gemm(false, false, rows, din, r, grad_low.data(), adapter->a.value.data(), grad_dropped.data(), false);
        for (std::size_t i = 0; i < grad_dropped.size(); ++i) (*grad_x)[i] += grad_dropped[i] * cache.mask[i];
    }
}

template <typename T>
Tensor<T> lora_merge(const Tensor<T>& weight, const LoraAdapter<T>& adapter, const LoraConfig& cfg) {
    if (cfg.rank == 0) throw ConfigError("lora_merge: rank is 0");
    require_adapter_shapes(weight, adapter, cfg.rank);
    const std::size_t din = weight.dim(0), dout = weight.dim(1), r = cfg.rank;
    Tensor<T> ba({dout, din});
    detail::gemm(false, false, dout, din, r, adapter.b.value.data(), adapter.a.value.data(), ba.data(), false);
    Tensor<T> merged = weight;
    const T s = static_cast<T>(cfg.scale());
    for (std::size_t i = 0; i < din; ++i)
        for (std::size_t j = 0; j < dout; ++j) merged[i * dout + j] += s * ba[j * din + i];
    return merged;
}

namespace {

// softmax(Q K^T / sqrt(hd) [+ causal mask]) V per batch element and head.
template <typename T>
void attention_forward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads, bool causal,
                       Tensor<T>& probs, Tensor<T>& out) {
    const std::size_t batch = q.dim(0), n = q.dim(1), d = q.dim(2), hd = d / heads;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
    probs = Tensor<T>({batch, heads, n, n});
    out = Tensor<T>({batch, n, d});
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t h = 0; h < heads; ++h) {
            T* p = probs.data() + ((b * heads + h) * n) * n;
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t limit = causal ? i + 1 : n;
                const T* qi = q.data() + (b * n + i) * d + h * hd;
                T mx = -std::numeric_limits<T>::infinity();
                for (std::size_t j = 0; j < limit; ++j) {
                    const T* kj = k.data() + (b * n + j) * d + h * hd;
                    T s{0};
                    for (std::size_t e = 0; e < hd; ++e) s += qi[e] * kj[e];
                    p[i * n + j] = s * scale;
                    mx = std::max(mx, p[i * n + j]);
                }
                T sum{0};
                for (std::size_t j = 0; j < limit; ++j) sum += (p[i * n + j] = std::exp(p[i * n + j] - mx));
                for (std::size_t j = 0; j < limit; ++j) p[i * n + j] /= sum;
                T* oi = out.data() + (b * n + i) * d + h * hd;
                for (std::size_t j = 0; j < limit; ++j) {
                    const T pij = p[i * n + j];
                    const T* vj = v.data() + (b * n + j) * d + h * hd;
                    for (std::size_t e = 0; e < hd; ++e) oi[e] += pij * vj[e];
                }
            }
        }
}

template <typename T>
void attention_backward(const Tensor<T>& grad_out, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                        const Tensor<T>& probs, std::size_t heads, Tensor<T>& gq, Tensor<T>& gk, Tensor<T>& gv) {
    const std::size_t batch = q.dim(0), n = q.dim(1), d = q.dim(2), hd = d / heads;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
    std::vector<T> gp(n);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t h = 0; h < heads; ++h) {
            const T* p = probs.data() + ((b * heads + h) * n) * n;
            for (std::size_t i = 0; i < n; ++i) {
                const T* goi = grad_out.data() + (b * n + i) * d + h * hd;
                T dot{0};
                for (std::size_t j = 0; j < n; ++j) {
                    const T* vj = v.data() + (b * n + j) * d + h * hd;
                    T s{0};
                    for (std::size_t e = 0; e < hd; ++e) s += goi[e] * vj[e];
                    gp[j] = s;
                    dot += s * p[i * n + j];
                    T* gvj = gv.data() + (b * n + j) * d + h * hd;
                    for (std::size_t e = 0; e < hd; ++e) gvj[e] += p[i * n + j] * goi[e];
                }
                const T* qi = q.data() + (b * n + i) * d + h * hd;
                T* gqi = gq.data() + (b * n + i) * d + h * hd;
                for (std::size_t j = 0; j < n; ++j) {
                    const T ds = p[i * n + j] * (gp[j] - dot) * scale;
                    if (ds == T{0}) continue;
                    const T* kj = k.data() + (b * n + j) * d + h * hd;
                    T* gkj = gk.data() + (b * n + j) * d + h * hd;
                    for (std::size_t e = 0; e < hd; ++e) {
                        gqi[e] += ds * kj[e];
                        gkj[e] += ds * qi[e];
                    }
                }
            }
        }
}

template <typename T>
const LoraAdapter<T>* adapter_ptr(const std::optional<LoraAdapter<T>>& a) {
    return a ? &*a : nullptr;
}
template <typename T>
LoraAdapter<T>* adapter_ptr(std::optional<LoraAdapter<T>>& a) {
    return a ? &*a : nullptr;
}

} // namespace

template <typename T>
Tensor<T> block_forward(const Tensor<T>& x, const BlockParams<T>& p, const BackboneConfig& cfg,
                        const LoraConfig& lora, SeedStream& rng, bool training, BlockCache<T>* cache) {
    if (x.rank() != 3 || x.dim(2) != cfg.d_model)
        throw DimensionError("block: expected [B, N, " + std::to_string(cfg.d_model) + "], got " + shape_str(x.shape()));
    const std::size_t batch = x.dim(0), n = x.dim(1), d = cfg.d_model;
    if (n > cfg.max_positions)
        throw SequenceLengthError("sequence length " + std::to_string(n) + " exceeds max_positions " +
                                  std::to_string(cfg.max_positions));
    BlockCache<T> local;
    BlockCache<T>& c = cache ? *cache : local;
    c.batch = batch;
    c.seq = n;

    const Tensor<T> flat = x.reshaped({batch * n, d});
    c.attn_in = layer_norm(flat, p.ln1_gamma.value, p.ln1_beta.value, cfg.layer_norm_eps, &c.ln1);
    c.q = lora_forward(c.attn_in, p.query_w.value, &p.query_b.value, adapter_ptr(p.lora_query), lora, rng, training,
                       &c.q_cache)
              .reshaped({batch, n, d});
    c.k = lora_forward(c.attn_in, p.key_w.value, &p.key_b.value, adapter_ptr(p.lora_key), lora, rng, training,
                       &c.k_cache)
              .reshaped({batch, n, d});
    c.v = lora_forward(c.attn_in, p.value_w.value, &p.value_b.value, adapter_ptr(p.lora_value), lora, rng, training,
                       &c.v_cache)
              .reshaped({batch, n, d});
    Tensor<T> attn;
    attention_forward(c.q, c.k, c.v, cfg.n_heads, cfg.causal, c.probs, attn);
    c.attn_concat = std::move(attn).reshaped({batch * n, d});
    Tensor<T> mid = linear(c.attn_concat, p.out_w.value, &p.out_b.value);
    mid += flat;

    c.mlp_in = layer_norm(mid, p.ln2_gamma.value, p.ln2_beta.value, cfg.layer_norm_eps, &c.ln2);
    c.fc_pre = linear(c.mlp_in, p.fc_w.value, &p.fc_b.value);
    c.fc_act = activation(c.fc_pre, Activation::gelu);
    Tensor<T> out = linear(c.fc_act, p.proj_w.value, &p.proj_b.value);
    out += mid;
    check_finite(out, "block_forward");
    return std::move(out).reshaped({batch, n, d});
}

template <typename T>
Tensor<T> block_backward(const Tensor<T>& grad_out, BlockParams<T>& p, const BackboneConfig& cfg,
                         const LoraConfig& lora, const BlockCache<T>& c) {
    const std::size_t rows = c.batch * c.seq, d = cfg.d_model;
    const Tensor<T> g = grad_out.reshaped({rows, d});

    // MLP residual
    Tensor<T> grad_act(c.fc_act.shape());
    linear_backward<T>(g, c.fc_act, p.proj_w.value, &grad_act, nullptr, nullptr);
    const Tensor<T> grad_fc = activation_backward(grad_act, c.fc_pre, Activation::gelu);
    Tensor<T> grad_mlp_in(c.mlp_in.shape());
    linear_backward<T>(grad_fc, c.mlp_in, p.fc_w.value, &grad_mlp_in, nullptr, nullptr);
    Tensor<T> grad_mid = g;
    layer_norm_backward<T>(grad_mlp_in, c.ln2, p.ln2_gamma.value, &grad_mid, nullptr, nullptr);

    // attention residual
    Tensor<T> grad_concat(c.attn_concat.shape());
    linear_backward<T>(grad_mid, c.attn_concat, p.out_w.value, &grad_concat, nullptr, nullptr);
    Tensor<T> gq(c.q.shape()), gk(c.k.shape()), gv(c.v.shape());
    attention_backward(grad_concat.reshaped(c.q.shape()), c.q, c.k, c.v, c.probs, cfg.n_heads, gq, gk, gv);
    Tensor<T> grad_attn_in(c.attn_in.shape());
    gq.reshape({rows, d});
    gk.reshape({rows, d});
    gv.reshape({rows, d});
    lora_backward(gq, p.query_w.value, adapter_ptr(p.lora_query), lora, c.q_cache, &grad_attn_in);
    lora_backward(gk, p.key_w.value, adapter_ptr(p.lora_key), lora, c.k_cache, &grad_attn_in);
    lora_backward(gv, p.value_w.value, adapter_ptr(p.lora_value), lora, c.v_cache, &grad_attn_in);
    Tensor<T> grad_x = grad_mid;
    layer_norm_backward<T>(grad_attn_in, c.ln1, p.ln1_gamma.value, &grad_x, nullptr, nullptr);
    return std::move(grad_x).reshaped({c.batch, c.seq, d});
}

template <typename T>
Backbone<T>::Backbone(const BackboneConfig& cfg, const LoraConfig& lora, SeedStream init) : cfg_(cfg), lora_(lora) {
    cfg_.validate();
    lora_.validate();
    const std::size_t d = cfg.d_model, ff = cfg.ff_dim();
    const double proj_std = 0.02 / std::sqrt(2.0 * static_cast<double>(cfg.n_layers));
    position_embedding_ = frozen("backbone.position_embedding",
                                 normal_tensor<T>({cfg.max_positions, d}, init.substream("backbone.wpe"), 0.01));
    if (cfg.vocab_size)
        token_embedding_ = frozen("backbone.token_embedding",
                                  normal_tensor<T>({cfg.vocab_size, d}, init.substream("backbone.wte"), 0.02));
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::string pre = "backbone.layers." + std::to_string(l) + ".";
        auto w = [&](const std::string& name, Shape shape, double stddev) {
            return frozen(pre + name, normal_tensor<T>(std::move(shape), init.substream(pre + name), stddev));
        };
        auto zeros = [&](const std::string& name, std::size_t n) { return frozen(pre + name, Tensor<T>({n})); };
        auto ones = [&](const std::string& name, std::size_t n) { return frozen(pre + name, Tensor<T>({n}, T{1})); };
        BlockParams<T> b;
        b.ln1_gamma = ones("ln1.gamma", d);
        b.ln1_beta = zeros("ln1.beta", d);
        b.query_w = w("attn.query.weight", {d, d}, 0.02);
        b.query_b = zeros("attn.query.bias", d);
        b.key_w = w("attn.key.weight", {d, d}, 0.02);
        b.key_b = zeros("attn.key.bias", d);
        b.value_w = w("attn.value.weight", {d, d}, 0.02);
        b.value_b = zeros("attn.value.bias", d);
        b.out_w = w("attn.out.weight", {d, d}, proj_std);
        b.out_b = zeros("attn.out.bias", d);
        b.ln2_gamma = ones("ln2.gamma", d);
        b.ln2_beta = zeros("ln2.beta", d);
        b.fc_w = w("mlp.fc.weight", {d, ff}, 0.02);
        b.fc_b = zeros("mlp.fc.bias", ff);
        b.proj_w = w("mlp.proj.weight", {ff, d}, proj_std);
        b.proj_b = zeros("mlp.proj.bias", d);
        if (lora.rank > 0) {
            auto make = [&](const std::string& target) {
                const std::string name = "lora.layers." + std::to_string(l) + "." + target;
                return LoraAdapter<T>{
                    Param<T>(name + ".A", normal_tensor<T>({lora.rank, d}, init.substream(name), 0.02), true),
                    Param<T>(name + ".B", Tensor<T>({d, lora.rank}), true)};
            };
            if (lora.targets_projection("query")) b.lora_query = make("query");
            if (lora.targets_projection("key")) b.lora_key = make("key");
            if (lora.targets_projection("value")) b.lora_value = make("value");
        }
        layers_.push_back(std::move(b));
    }
    final_gamma_ = frozen("backbone.final_norm.gamma", Tensor<T>({d}, T{1}));
    final_beta_ = frozen("backbone.final_norm.beta", Tensor<T>({d}));
}

template <typename T>
Tensor<T> Backbone<T>::forward(const Tensor<T>& tokens, SeedStream& rng, bool training, Cache* cache) const {
    if (tokens.rank() != 3 || tokens.dim(2) != cfg_.d_model)
        throw DimensionError("backbone: expected [B, N, " + std::to_string(cfg_.d_model) + "], got " +
                             shape_str(tokens.shape()));
    const std::size_t batch = tokens.dim(0), n = tokens.dim(1), d = cfg_.d_model;
    if (n > cfg_.max_positions)
        throw SequenceLengthError("sequence length " + std::to_string(n) + " exceeds max_positions " +
                                  std::to_string(cfg_.max_positions));
    Tensor<T> x = tokens;
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < n; ++t)
            for (std::size_t e = 0; e < d; ++e) x[(b * n + t) * d + e] += position_embedding_.value[t * d + e];
    if (cache) cache->blocks.assign(layers_.size(), BlockCache<T>{});
    for (std::size_t l = 0; l < layers_.size(); ++l)
        x = block_forward(x, layers_[l], cfg_, lora_, rng, training, cache ? &cache->blocks[l] : nullptr);
    return layer_norm(x, final_gamma_.value, final_beta_.value, cfg_.layer_norm_eps,
                      cache ? &cache->final_norm : nullptr);
}

template <typename T>
Tensor<T> Backbone<T>::backward(const Tensor<T>& grad_hidden, const Cache& cache) {
    Tensor<T> g(grad_hidden.shape());
    layer_norm_backward<T>(grad_hidden, cache.final_norm, final_gamma_.value, &g, nullptr, nullptr);
    for (std::size_t l = layers_.size(); l-- > 0;) g = block_backward(g, layers_[l], cfg_, lora_, cache.blocks[l]);
    return g; // position embeddings are additive and frozen
}

template <typename T>
std::vector<Param<T>*> Backbone<T>::base_parameters() {
    std::vector<Param<T>*> out{&position_embedding_};
    if (token_embedding_) out.push_back(&*token_embedding_);
    for (auto& b : layers_)
        out.insert(out.end(), {&b.ln1_gamma, &b.ln1_beta, &b.query_w, &b.query_b, &b.key_w, &b.key_b, &b.value_w,
                               &b.value_b, &b.out_w, &b.out_b, &b.ln2_gamma, &b.ln2_beta, &b.fc_w, &b.fc_b, &b.proj_w,
                               &b.proj_b});
    out.insert(out.end(), {&final_gamma_, &final_beta_});
    return out;
}

template <typename T>
std::vector<Param<T>*> Backbone<T>::adapter_parameters() {
    std::vector<Param<T>*> out;
    for (auto& b : layers_)
        for (auto* a : {&b.lora_query, &b.lora_key, &b.lora_value})
            if (*a) out.insert(out.end(), {&(*a)->a, &(*a)->b});
    return out;
}

std::optional<std::string> map_gpt2_name(const std::string& raw) {
    std::string name = raw;
    if (name.rfind("transformer.", 0) == 0) name = name.substr(12);
    static const std::map<std::string, std::string> top = {
        {"wpe.weight", "backbone.position_embedding"},
        {"wte.weight", "backbone.token_embedding"},
        {"ln_f.weight", "backbone.final_norm.gamma"},
        {"ln_f.bias", "backbone.final_norm.beta"},
    };
    if (auto it = top.find(name); it != top.end()) return it->second;
    static const std::regex layer_re(R"(h\.(\d+)\.(.+))");
    std::smatch m;
    if (!std::regex_match(name, m, layer_re)) return std::nullopt;
    static const std::map<std::string, std::string> inner = {
        {"ln_1.weight", "ln1.gamma"},          {"ln_1.bias", "ln1.beta"},
        {"ln_2.weight", "ln2.gamma"},          {"ln_2.bias", "ln2.beta"},
        {"attn.c_attn.weight", "attn.qkv.weight"}, {"attn.c_attn.bias", "attn.qkv.bias"},
        {"attn.c_proj.weight", "attn.out.weight"}, {"attn.c_proj.bias", "attn.out.bias"},
        {"mlp.c_fc.weight", "mlp.fc.weight"},  {"mlp.c_fc.bias", "mlp.fc.bias"},
        {"mlp.c_proj.weight", "mlp.proj.weight"}, {"mlp.c_proj.bias", "mlp.proj.bias"},
    };
    auto it = inner.find(m[2].str());
    if (it == inner.end()) return std::nullopt; // e.g. attn.bias / attn.masked_bias buffers
    return "backbone.layers." + m[1].str() + "." + it->second;
}

std::vector<ArchiveTensor> split_fused_qkv(const ArchiveTensor& fused) {
    const Shape& s = fused.shape;
    if (s.size() == 1) {
        if (s[0] % 3 != 0) throw CheckpointError("fused qkv bias of shape " + shape_str(s) + " is not divisible by 3");
        const std::size_t d = s[0] / 3;
        std::vector<ArchiveTensor> out(3);
        for (std::size_t p = 0; p < 3; ++p)
            out[p] = {{d}, std::vector<float>(fused.data.begin() + static_cast<std::ptrdiff_t>(p * d),
                                              fused.data.begin() + static_cast<std::ptrdiff_t>((p + 1) * d))};
        return out;
    }
    if (s.size() != 2 || s[1] != 3 * s[0])
        throw CheckpointError("fused qkv weight must be [d, 3d], got " + shape_str(s));
    const std::size_t d = s[0];
    std::vector<ArchiveTensor> out(3);
    for (std::size_t p = 0; p < 3; ++p) {
        out[p].shape = {d, d};
        out[p].data.resize(d * d);
        for (std::size_t i = 0; i < d; ++i)
            std::copy_n(fused.data.begin() + static_cast<std::ptrdiff_t>(i * 3 * d + p * d), d,
                        out[p].data.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    return out;
}

template <typename T>
void load_backbone_weights(Backbone<T>& backbone, const TensorMap& tensors) {
    TensorMap native;
    for (const auto& [name, t] : tensors) {
        if (name.rfind("backbone.", 0) == 0) {
            native[name] = t;
            continue;
        }
        const auto mapped = map_gpt2_name(name);
        if (!mapped) continue;
        const auto dot = mapped->rfind(".qkv.");
        if (dot == std::string::npos) {
            native[*mapped] = t;
            continue;
        }
        const std::string prefix = mapped->substr(0, dot + 1), suffix = mapped->substr(dot + 5);
        auto parts = split_fused_qkv(t);
        const char* names[3] = {"query.", "key.", "value."};
        for (std::size_t p = 0; p < 3; ++p) native[prefix + names[p] + suffix] = std::move(parts[p]);
    }
    for (Param<T>* param : backbone.base_parameters()) {
        auto it = native.find(param->name);
        if (it == native.end()) throw CheckpointError("missing tensor '" + param->name + "'");
        const ArchiveTensor& src = it->second;
        if (param->name == "backbone.position_embedding" && src.shape.size() == 2 &&
            src.shape[1] == param->value.dim(1) && src.shape[0] >= param->value.dim(0)) {
            // checkpoints may hold more positions than configured; keep the prefix
            std::copy_n(src.data.begin(), param->value.size(), param->value.data());
            continue;
        }
        if (src.shape != param->value.shape())
            throw CheckpointError("tensor '" + param->name + "': shape " + shape_str(src.shape) + " vs configured " +
                                  shape_str(param->value.shape()));
        std::transform(src.data.begin(), src.data.end(), param->value.data(), [](float v) { return static_cast<T>(v); });
    }
}

#define HARLLM_INSTANTIATE_BACKBONE(T)                                                                             \
    template Tensor<T> lora_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, const LoraAdapter<T>*, \
                                       const LoraConfig&, SeedStream&, bool, LoraCache<T>*);                       \
    template void lora_backward<T>(const Tensor<T>&, const Tensor<T>&, LoraAdapter<T>*, const LoraConfig&,          \
                                   const LoraCache<T>&, Tensor<T>*);                                               \
    template Tensor<T> lora_merge<T>(const Tensor<T>&, const LoraAdapter<T>&, const LoraConfig&);                   \
    template Tensor<T> block_forward<T>(const Tensor<T>&, const BlockParams<T>&, const BackboneConfig&,             \
                                        const LoraConfig&, SeedStream&, bool, BlockCache<T>*);                     \
    template Tensor<T> block_backward<T>(const Tensor<T>&, BlockParams<T>&, const BackboneConfig&,                  \
                                         const LoraConfig&, const BlockCache<T>&);                                 \
    template class Backbone<T>;                                                                                    \
    template void load_backbone_weights<T>(Backbone<T>&, const TensorMap&);

HARLLM_INSTANTIATE_BACKBONE(float)
HARLLM_INSTANTIATE_BACKBONE(double)

} // namespace harllm
