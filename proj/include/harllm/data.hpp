// SPDX-License-Identifier: Apache-2.0
//
// Recording ingestion, sliding windows, normalisation, splits and framing.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "harllm/tensor.hpp"

namespace harllm::data {

/// acc_x, acc_y, acc_z, gyro_x, gyro_y, gyro_z
inline constexpr std::size_t kChannels = 6;
using Sample = std::array<float, kChannels>;

class LabelVocabulary {
public:
    LabelVocabulary() = default;
    explicit LabelVocabulary(std::vector<std::string> names);

    std::optional<int> index_of(const std::string& name) const;
    const std::string& name(int index) const { return names_.at(static_cast<std::size_t>(index)); }
    const std::vector<std::string>& names() const noexcept { return names_; }
    std::size_t size() const noexcept { return names_.size(); }

private:
    std::vector<std::string> names_;
};

struct Recording {
    std::string id;
    std::vector<Sample> samples;
    std::vector<int> labels; // one vocabulary index per row
    std::string subject;
    std::string domain;
    double rate_hz = 0.0;

    std::size_t length() const noexcept { return samples.size(); }
};

struct LoadOptions {
    LabelVocabulary vocabulary;
    /// Raw label name -> vocabulary name, applied before lookup. Unmapped names
    /// are looked up verbatim.
    std::map<std::string, std::string> label_map;
    /// Used when the CSV carries no `domain` column.
    std::string domain = "default";
    /// 0 infers the rate from the median spacing of the `t` column.
    double rate_hz = 0.0;
};

/// Parses one CSV file, or every `*.csv` in a directory (sorted by name).
/// A file yields one Recording per contiguous run of (subject, domain).
std::vector<Recording> load_recordings(const std::filesystem::path& path, const LoadOptions& options);

/// Writes recordings in the CSV wire format, shortest round-trip decimal text.
void save_recordings_csv(const std::filesystem::path& file, std::span<const Recording> recordings,
                         const LabelVocabulary& vocabulary);

/// Linear interpolation of the samples to `target_hz`; labels take the nearest
/// earlier row.
Recording resample_linear(const Recording& rec, double target_hz);

struct SensorWindow {
    std::vector<float> values; // W x C, time-major
    int label = 0;
    std::string subject;
    std::string domain;
};

/// stride = round(W * (1 - overlap)), at least 1.
std::size_t window_stride(std::size_t window, double overlap);
/// floor((len - W) / stride) + 1, or 0 when the recording is shorter than W.
std::size_t window_count(std::size_t length, std::size_t window, double overlap);

/// Each window is labelled by majority vote over its rows (ties -> lowest index).
std::vector<SensorWindow> make_windows(const Recording& rec, std::size_t window, double overlap);

/// Flat window store. Subjects and domains are indices into their name tables.
struct WindowedDataset {
    std::size_t window = 0;
    std::size_t channels = kChannels;
    std::vector<float> values; // size() x window x channels
    std::vector<int> labels;
    std::vector<int> subjects;
    std::vector<int> domains;
    std::vector<std::string> label_names;
    std::vector<std::string> subject_names;
    std::vector<std::string> domain_names;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t num_classes() const noexcept { return label_names.size(); }
    std::span<const float> window_values(std::size_t i) const {
        return std::span<const float>(values).subspan(i * window * channels, window * channels);
    }

    void append(const SensorWindow& w);
    /// Windows at `indices`, in that order; name tables are kept.
    WindowedDataset subset(std::span<const std::size_t> indices) const;
    /// B x W x C tensor of the windows at `indices`.
    Tensor<float> batch(std::span<const std::size_t> indices) const;
    std::vector<int> labels_at(std::span<const std::size_t> indices) const;
    std::optional<int> domain_index(const std::string& name) const;
};

/// Windows every recording (processed in recording-id order) into one dataset.
WindowedDataset build_dataset(std::span<const Recording> recordings, const LabelVocabulary& vocabulary,
                              std::size_t window, double overlap);

enum class NormMode { dataset, window };

struct NormStats {
    NormMode mode = NormMode::dataset;
    std::array<double, kChannels> mean{};
    std::array<double, kChannels> std{};
};

inline constexpr double kNormEpsilon = 1e-8;

/// Per-channel mean and population std over the windows at `train`.
NormStats compute_norm_stats(const WindowedDataset& ds, std::span<const std::size_t> train);
/// (x - mean) / (std + 1e-8) on every window; per-window mode recomputes the
/// statistics of each window and ignores `stats.mean`/`stats.std`.
void apply_norm(WindowedDataset& ds, const NormStats& stats);
/// compute_norm_stats on `train`, then apply_norm to all windows.
NormStats z_normalize(WindowedDataset& ds, std::span<const std::size_t> train, NormMode mode = NormMode::dataset);

enum class Grouping { random, subject };

struct SplitSpec {
    double train = 0.72;
    double val = 0.08;
    double test = 0.20;
    double fraction = 1.0; // applied to the train split only
    std::uint64_t seed = 0;
    Grouping grouping = Grouping::random;

    void validate() const;
};

struct Split {
    std::vector<std::size_t> train, val, test;
};

/// Partitions window indices by `spec`, then keeps ceil(f * n_c) training
/// windows per class. Every index list is sorted ascending.
Split split_and_subsample(std::span<const int> labels, std::span<const int> subjects, std::size_t num_classes,
                          const SplitSpec& spec);

/// Stratified subsample of `pool`: ceil(fraction * n_c) per class, seeded.
std::vector<std::size_t> stratified_subsample(std::span<const std::size_t> pool, std::span<const int> labels,
                                              std::size_t num_classes, double fraction, std::uint64_t seed);

/// B x W x C -> B x N x L x C, N = W / L. A reshape: element order is unchanged.
template <typename T>
Tensor<T> frame(const Tensor<T>& windows, std::size_t frame_length);
template <typename T>
Tensor<T> unframe(const Tensor<T>& frames);

} // namespace harllm::data
