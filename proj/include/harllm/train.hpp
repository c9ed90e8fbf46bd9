// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "harllm/data.hpp"
#include "harllm/metrics.hpp"
#include "harllm/model.hpp"

namespace harllm {

struct TrainConfig {
    std::size_t batch_size = 128;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t max_epochs = 200;
    std::size_t patience = 10;
    double clip_norm = 0.0; // global-norm clipping, 0 disables
    std::uint64_t seed = 0;

    void validate() const;
};

/// Bias-corrected Adam without weight decay. Moments are allocated for the
/// parameters handed in, which must all be trainable.
template <typename T>
class Adam {
public:
    Adam(std::vector<Param<T>*> params, const TrainConfig& cfg);

    /// Throws TrainingAborted (step, parameter) on a non-finite gradient before
    /// touching any parameter.
    void step();

    std::size_t steps() const noexcept { return t_; }
    bool has_state(const std::string& name) const;
    const Tensor<T>& first_moment(const std::string& name) const;
    const Tensor<T>& second_moment(const std::string& name) const;

private:
    std::vector<Param<T>*> params_;
    std::vector<Tensor<T>> m_, v_;
    TrainConfig cfg_;
    std::size_t t_ = 0;
};

/// Patience counter on a validation score; improvement is strict (> best).
class EarlyStopping {
public:
    explicit EarlyStopping(std::size_t patience);

    struct Decision {
        bool improved = false;
        bool stop = false;
    };

    Decision observe(double score);

    double best_score() const noexcept { return best_; }
    std::size_t best_epoch() const noexcept { return best_epoch_; }
    std::size_t epochs_seen() const noexcept { return seen_; }

private:
    std::size_t patience_;
    double best_ = -1.0;
    std::size_t best_epoch_ = 0;
    std::size_t since_best_ = 0;
    std::size_t seen_ = 0;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_weighted_f1 = 0.0;
    double val_accuracy = 0.0;
    double seconds = 0.0;
};

struct TrainingLog {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_val_f1 = 0.0;
    std::size_t steps = 0;
    bool stopped_early = false;

    /// `epoch,train_loss,val_weighted_f1,val_accuracy,seconds`
    std::string to_csv(bool with_timing = true) const;
    void write_csv(const std::filesystem::path& file) const;
};

template <typename T>
struct FitHooks {
    /// Replaces the validation weighted F1 of an epoch (scripted runs).
    std::function<double(std::size_t epoch)> val_score;
    std::function<void(std::size_t epoch, HarllmModel<T>& model)> on_epoch_end;
    /// Prints one line per epoch when set.
    std::ostream* progress = nullptr;
};

/// One optimisation step on a batch; returns the mean cross-entropy.
template <typename T>
double train_step(HarllmModel<T>& model, Adam<T>& adam, const Tensor<T>& windows, std::span<const int> labels,
                  SeedStream& rng);

/// Mean cross-entropy in eval mode, without touching gradients.
template <typename T>
double batch_loss(const HarllmModel<T>& model, const Tensor<T>& windows, std::span<const int> labels);

/// Seeded-shuffle epochs with early stopping on validation weighted F1; the
/// best epoch's trainable parameters are restored before returning.
template <typename T>
TrainingLog fit(HarllmModel<T>& model, const data::WindowedDataset& train, const data::WindowedDataset& val,
                const TrainConfig& cfg, const FitHooks<T>& hooks = {});

/// Eval-mode predictions over the whole dataset.
template <typename T>
EvalReport evaluate(const HarllmModel<T>& model, const data::WindowedDataset& ds, std::size_t batch_size);

} // namespace harllm
