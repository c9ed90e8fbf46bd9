// SPDX-License-Identifier: Apache-2.0
#include "harllm/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

namespace harllm {

void TrainConfig::validate() const {
    if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
    if (patience == 0) throw ConfigError("train: patience must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: betas must lie in [0, 1)");
    if (clip_norm < 0.0) throw ConfigError("train: clip_norm must be >= 0");
}

template <typename T>
Adam<T>::Adam(std::vector<Param<T>*> params, const TrainConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    for (auto* p : params_) {
        if (!p->trainable) throw ConfigError("adam: parameter '" + p->name + "' is frozen");
        m_.push_back(Tensor<T>::zeros_like(p->value));
        v_.push_back(Tensor<T>::zeros_like(p->value));
    }
}

template <typename T>
void Adam<T>::step() {
    const std::size_t next = t_ + 1;
    double norm_sq = 0.0;
    for (auto* p : params_)
        for (T g : p->grad.span()) {
            if (!std::isfinite(g)) throw TrainingAborted(next, p->name, "non-finite gradient");
            norm_sq += static_cast<double>(g) * g;
        }
    double clip = 1.0;
    if (cfg_.clip_norm > 0.0 && std::sqrt(norm_sq) > cfg_.clip_norm) clip = cfg_.clip_norm / std::sqrt(norm_sq);

    t_ = next;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Param<T>& p = *params_[i];
        T* m = m_[i].data();
        T* v = v_[i].data();
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            const T g = static_cast<T>(p.grad[j] * clip);
            m[j] = b1 * m[j] + (T{1} - b1) * g;
            v[j] = b2 * v[j] + (T{1} - b2) * g * g;
            const double mhat = m[j] / bc1, vhat = v[j] / bc2;
            p.value[j] -= static_cast<T>(cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
        }
    }
}

template <typename T>
bool Adam<T>::has_state(const std::string& name) const {
    for (auto* p : params_)
        if (p->name == name) return true;
    return false;
}

template <typename T>
const Tensor<T>& Adam<T>::first_moment(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (params_[i]->name == name) return m_[i];
    throw Error("adam: no state for '" + name + "'");
}

template <typename T>
const Tensor<T>& Adam<T>::second_moment(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (params_[i]->name == name) return v_[i];
    throw Error("adam: no state for '" + name + "'");
}

EarlyStopping::EarlyStopping(std::size_t patience) : patience_(patience) {
    if (patience == 0) throw ConfigError("early stopping: patience must be >= 1");
}

EarlyStopping::Decision EarlyStopping::observe(double score) {
    Decision d;
    const std::size_t epoch = seen_++;
    if (epoch == 0 || score > best_) {
        best_ = score;
        best_epoch_ = epoch;
        since_best_ = 0;
        d.improved = true;
    } else {
        ++since_best_;
    }
    d.stop = since_best_ >= patience_;
    return d;
}

std::string TrainingLog::to_csv(bool with_timing) const {
    std::ostringstream out;
    out << "epoch,train_loss,val_weighted_f1,val_accuracy" << (with_timing ? ",seconds" : "") << '\n';
    out << std::setprecision(10);
    for (const auto& e : epochs) {
        out << e.epoch << ',' << e.train_loss << ',' << e.val_weighted_f1 << ',' << e.val_accuracy;
        if (with_timing) out << ',' << std::setprecision(4) << e.seconds << std::setprecision(10);
        out << '\n';
    }
    return out.str();
}

void TrainingLog::write_csv(const std::filesystem::path& file) const {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw Error("cannot write " + file.string());
    out << to_csv(true);
}

namespace {

template <typename T>
Tensor<T> batch_as(const data::WindowedDataset& ds, std::span<const std::size_t> idx) {
    Tensor<float> b = ds.batch(idx);
    if constexpr (std::is_same_v<T, float>)
        return b;
    else
        return b.template cast<T>();
}

} // namespace

template <typename T>
double train_step(HarllmModel<T>& model, Adam<T>& adam, const Tensor<T>& windows, std::span<const int> labels,
                  SeedStream& rng) {
    typename HarllmModel<T>::Cache cache;
    const Tensor<T> logits = model.forward(windows, &rng, true, &cache);
    const CrossEntropy<T> ce = softmax_cross_entropy(logits, labels);
    model.zero_grad();
    model.backward(ce.grad_logits, cache);
    adam.step();
    return ce.loss;
}

template <typename T>
double batch_loss(const HarllmModel<T>& model, const Tensor<T>& windows, std::span<const int> labels) {
    return softmax_cross_entropy(model.forward(windows, nullptr, false), labels).loss;
}

template <typename T>
EvalReport evaluate(const HarllmModel<T>& model, const data::WindowedDataset& ds, std::size_t batch_size) {
    if (ds.size() == 0) throw MetricError("evaluate: empty dataset");
    if (batch_size == 0) throw ConfigError("evaluate: batch_size must be >= 1");
    const std::size_t k = model.config().num_classes();
    for (int l : ds.labels)
        if (l < 0 || static_cast<std::size_t>(l) >= k)
            throw IndexError("evaluate: label " + std::to_string(l) + " outside the model vocabulary of " +
                             std::to_string(k));
    std::vector<int> preds;
    preds.reserve(ds.size());
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < ds.size(); start += batch_size) {
        idx.resize(std::min(batch_size, ds.size() - start));
        std::iota(idx.begin(), idx.end(), start);
        const auto p = predict(model.forward(batch_as<T>(ds, idx), nullptr, false));
        preds.insert(preds.end(), p.begin(), p.end());
    }
    EvalReport r = compute_report(ds.labels, preds, k);
    r.labels = model.config().labels;
    return r;
}

template <typename T>
TrainingLog fit(HarllmModel<T>& model, const data::WindowedDataset& train, const data::WindowedDataset& val,
                const TrainConfig& cfg, const FitHooks<T>& hooks) {
    cfg.validate();
    if (train.size() == 0) throw ConfigError("fit: empty training set");
    if (val.size() == 0 && !hooks.val_score) throw ConfigError("fit: empty validation set");

    auto params = model.trainable_parameters();
    Adam<T> adam(params, cfg);
    EarlyStopping stopper(cfg.patience);
    const SeedStream root = SeedStream(cfg.seed).substream("fit");
    std::vector<Tensor<T>> best;
    for (auto* p : params) best.push_back(p->value);

    TrainingLog log;
    std::vector<std::size_t> order(train.size());
    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), 0);
        SeedStream shuffle = root.substream("shuffle").substream(epoch);
        std::shuffle(order.begin(), order.end(), shuffle.engine());

        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t n = std::min(cfg.batch_size, order.size() - start);
            const std::span<const std::size_t> idx(order.data() + start, n);
            const auto labels = train.labels_at(idx);
            SeedStream drop = root.substream("dropout").substream(log.steps);
            loss_sum += train_step(model, adam, batch_as<T>(train, idx), labels, drop) * static_cast<double>(n);
            seen += n;
            ++log.steps;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(seen);
        if (hooks.val_score) {
            rec.val_weighted_f1 = hooks.val_score(epoch);
            rec.val_accuracy = std::nan("");
        } else {
            const EvalReport r = evaluate(model, val, cfg.batch_size);
            rec.val_weighted_f1 = r.weighted_f1;
            rec.val_accuracy = r.accuracy;
        }
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.epochs.push_back(rec);

        const auto decision = stopper.observe(rec.val_weighted_f1);
        if (decision.improved)
            for (std::size_t i = 0; i < params.size(); ++i) best[i] = params[i]->value;
        if (hooks.progress)
            *hooks.progress << "epoch " << epoch << "  loss " << std::setprecision(5) << rec.train_loss << "  val_f1 "
                            << rec.val_weighted_f1 << (decision.improved ? "  *" : "") << '\n';
        if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, model);
        if (decision.stop) {
            log.stopped_early = true;
            break;
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
    log.best_epoch = stopper.best_epoch();
    log.best_val_f1 = stopper.best_score();
    return log;
}

#define HARLLM_INSTANTIATE_TRAIN(T)                                                                                 \
    template class Adam<T>;                                                                                        \
    template double train_step<T>(HarllmModel<T>&, Adam<T>&, const Tensor<T>&, std::span<const int>, SeedStream&); \
    template double batch_loss<T>(const HarllmModel<T>&, const Tensor<T>&, std::span<const int>);                  \
    template TrainingLog fit<T>(HarllmModel<T>&, const data::WindowedDataset&, const data::WindowedDataset&,       \
                                const TrainConfig&, const FitHooks<T>&);                                           \
    template EvalReport evaluate<T>(const HarllmModel<T>&, const data::WindowedDataset&, std::size_t);

HARLLM_INSTANTIATE_TRAIN(float)
HARLLM_INSTANTIATE_TRAIN(double)

} // namespace harllm
