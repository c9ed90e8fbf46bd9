// SPDX-License-Identifier: Apache-2.0
#include "harllm/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "harllm/rng.hpp"

namespace harllm::data {

namespace fs = std::filesystem;

LabelVocabulary::LabelVocabulary(std::vector<std::string> names) : names_(std::move(names)) {
    for (std::size_t i = 0; i < names_.size(); ++i)
        for (std::size_t j = i + 1; j < names_.size(); ++j)
            if (names_[i] == names_[j]) throw ConfigError("label vocabulary: duplicate name '" + names_[i] + "'");
}

std::optional<int> LabelVocabulary::index_of(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) return std::nullopt;
    return static_cast<int>(it - names_.begin());
}

namespace {

constexpr std::array<const char*, kChannels> kChannelNames = {"acc_x",  "acc_y",  "acc_z",
                                                               "gyro_x", "gyro_y", "gyro_z"};

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t");
    return s.substr(first, last - first + 1);
}

template <typename T>
bool parse_number(const std::string& text, T& out) {
    const char* begin = text.data();
    const char* end = text.data() + text.size();
    if (begin != end && *begin == '+') ++begin;
    auto [ptr, ec] = std::from_chars(begin, end, out);
    return ec == std::errc() && ptr == end;
}

std::vector<Recording> load_file(const fs::path& file, const LoadOptions& options) {
    std::ifstream in(file);
    if (!in) throw ParseError(file.string(), 0, "cannot open file");
    std::string line;
    if (!std::getline(in, line)) throw ParseError(file.string(), 1, "empty file, expected a header");
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3); // UTF-8 BOM

    const auto header = split_csv_line(line);
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[trim(header[i])] = i;

    std::size_t channel_cols = 0;
    for (const auto& [name, idx] : col)
        if (name.rfind("acc_", 0) == 0 || name.rfind("gyro_", 0) == 0) ++channel_cols;
    if (channel_cols != kChannels)
        throw ParseError(file.string(), 1,
                         "expected 6 channels, found " + std::to_string(channel_cols) + " sensor columns");
    std::array<std::size_t, kChannels> channel_idx{};
    for (std::size_t c = 0; c < kChannels; ++c) {
        auto it = col.find(kChannelNames[c]);
        if (it == col.end()) throw ParseError(file.string(), 1, std::string("missing column '") + kChannelNames[c] + "'");
        channel_idx[c] = it->second;
    }
    for (const char* required : {"t", "label", "subject"})
        if (!col.count(required)) throw ParseError(file.string(), 1, std::string("missing column '") + required + "'");
    const std::size_t t_idx = col["t"], label_idx = col["label"], subject_idx = col["subject"];
    const std::optional<std::size_t> domain_idx =
        col.count("domain") ? std::optional<std::size_t>(col["domain"]) : std::nullopt;

    std::vector<Recording> out;
    std::vector<std::vector<double>> times;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != header.size())
            throw ParseError(file.string(), lineno,
                             "expected " + std::to_string(header.size()) + " fields, got " +
                                 std::to_string(fields.size()));
        Sample s{};
        for (std::size_t c = 0; c < kChannels; ++c) {
            const std::string v = trim(fields[channel_idx[c]]);
            if (!parse_number(v, s[c]) || !std::isfinite(s[c]))
                throw ParseError(file.string(), lineno,
                                 std::string("non-numeric value '") + v + "' in column " + kChannelNames[c]);
        }
        double t = 0.0;
        const std::string tv = trim(fields[t_idx]);
        if (!parse_number(tv, t)) throw ParseError(file.string(), lineno, "non-numeric value '" + tv + "' in column t");

        std::string raw_label = trim(fields[label_idx]);
        if (auto it = options.label_map.find(raw_label); it != options.label_map.end()) raw_label = it->second;
        const auto label = options.vocabulary.index_of(raw_label);
        if (!label) throw ParseError(file.string(), lineno, "unknown label '" + raw_label + "'");

        const std::string subject = trim(fields[subject_idx]);
        const std::string domain = domain_idx ? trim(fields[*domain_idx]) : options.domain;
        if (out.empty() || out.back().subject != subject || out.back().domain != domain) {
            Recording rec;
            rec.id = file.stem().string() + "#" + std::to_string(out.size());
            rec.subject = subject;
            rec.domain = domain;
            rec.rate_hz = options.rate_hz;
            out.push_back(std::move(rec));
            times.emplace_back();
        }
        out.back().samples.push_back(s);
        out.back().labels.push_back(*label);
        times.back().push_back(t);
    }
    for (std::size_t r = 0; r < out.size(); ++r) {
        if (out[r].rate_hz > 0.0) continue;
        auto& t = times[r];
        if (t.size() < 2) throw ParseError(file.string(), 0, "cannot infer sample rate from fewer than 2 rows");
        std::vector<double> dt(t.size() - 1);
        for (std::size_t i = 1; i < t.size(); ++i) dt[i - 1] = t[i] - t[i - 1];
        std::nth_element(dt.begin(), dt.begin() + dt.size() / 2, dt.end());
        const double median = dt[dt.size() / 2];
        if (!(median > 0.0)) throw ParseError(file.string(), 0, "non-increasing timestamps, cannot infer sample rate");
        out[r].rate_hz = 1.0 / median;
    }
    return out;
}

template <typename T>
std::string shortest(T v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

} // namespace

std::vector<Recording> load_recordings(const fs::path& path, const LoadOptions& options) {
    if (!fs::exists(path)) throw ParseError(path.string(), 0, "no such file or directory");
    if (!fs::is_directory(path)) return load_file(path, options);
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(path))
        if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::vector<Recording> out;
    for (const auto& f : files) {
        auto recs = load_file(f, options);
        out.insert(out.end(), std::make_move_iterator(recs.begin()), std::make_move_iterator(recs.end()));
    }
    return out;
}

void save_recordings_csv(const fs::path& file, std::span<const Recording> recordings, const LabelVocabulary& vocabulary) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw Error("cannot write " + file.string());
    out << "t,acc_x,acc_y,acc_z,gyro_x,gyro_y,gyro_z,label,subject,domain\n";
    for (const auto& rec : recordings) {
        for (std::size_t i = 0; i < rec.length(); ++i) {
            out << shortest(static_cast<double>(i) / rec.rate_hz);
            for (float v : rec.samples[i]) out << ',' << shortest(v);
            out << ',' << vocabulary.name(rec.labels[i]) << ',' << rec.subject << ',' << rec.domain << '\n';
        }
    }
}

Recording resample_linear(const Recording& rec, double target_hz) {
    if (!(target_hz > 0.0) || !(rec.rate_hz > 0.0)) throw ConfigError("resample_linear: rates must be positive");
    Recording out = rec;
    out.rate_hz = target_hz;
    if (rec.length() < 2 || rec.rate_hz == target_hz) return out;
    const double duration = static_cast<double>(rec.length() - 1) / rec.rate_hz;
    const std::size_t n = static_cast<std::size_t>(std::floor(duration * target_hz + 1e-9)) + 1;
    out.samples.assign(n, Sample{});
    out.labels.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const double pos = static_cast<double>(i) * rec.rate_hz / target_hz;
        const std::size_t lo = std::min(static_cast<std::size_t>(pos), rec.length() - 1);
        const std::size_t hi = std::min(lo + 1, rec.length() - 1);
        const double w = pos - static_cast<double>(lo);
        for (std::size_t c = 0; c < kChannels; ++c)
            out.samples[i][c] = static_cast<float>((1.0 - w) * rec.samples[lo][c] + w * rec.samples[hi][c]);
        out.labels[i] = rec.labels[lo];
    }
    return out;
}

std::size_t window_stride(std::size_t window, double overlap) {
    if (!(overlap >= 0.0 && overlap < 1.0)) throw ConfigError("overlap must lie in [0, 1), got " + std::to_string(overlap));
    const auto stride = static_cast<std::size_t>(std::llround(static_cast<double>(window) * (1.0 - overlap)));
    return std::max<std::size_t>(stride, 1);
}

std::size_t window_count(std::size_t length, std::size_t window, double overlap) {
    const std::size_t stride = window_stride(window, overlap);
    if (window == 0 || length < window) return 0;
    return (length - window) / stride + 1;
}

std::vector<SensorWindow> make_windows(const Recording& rec, std::size_t window, double overlap) {
    if (window == 0) throw ConfigError("window length must be positive");
    const std::size_t count = window_count(rec.length(), window, overlap);
    const std::size_t stride = window_stride(window, overlap);
    std::vector<SensorWindow> out;
    out.reserve(count);
    const int max_label = rec.labels.empty() ? 0 : *std::max_element(rec.labels.begin(), rec.labels.end());
    std::vector<std::size_t> votes(static_cast<std::size_t>(max_label) + 1);
    for (std::size_t w = 0; w < count; ++w) {
        const std::size_t start = w * stride;
        SensorWindow sw;
        sw.subject = rec.subject;
        sw.domain = rec.domain;
        sw.values.reserve(window * kChannels);
        std::fill(votes.begin(), votes.end(), 0);
        for (std::size_t t = start; t < start + window; ++t) {
            sw.values.insert(sw.values.end(), rec.samples[t].begin(), rec.samples[t].end());
            ++votes[static_cast<std::size_t>(rec.labels[t])];
        }
        // max_element returns the first maximum, i.e. the lowest class index
        sw.label = static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
        out.push_back(std::move(sw));
    }
    return out;
}

namespace {

int intern(std::vector<std::string>& table, const std::string& name) {
    auto it = std::find(table.begin(), table.end(), name);
    if (it != table.end()) return static_cast<int>(it - table.begin());
    table.push_back(name);
    return static_cast<int>(table.size() - 1);
}

} // namespace

void WindowedDataset::append(const SensorWindow& w) {
    if (w.values.size() != window * channels)
        throw DimensionError("window has " + std::to_string(w.values.size()) + " values, dataset expects " +
                             std::to_string(window * channels));
    values.insert(values.end(), w.values.begin(), w.values.end());
    labels.push_back(w.label);
    subjects.push_back(intern(subject_names, w.subject));
    domains.push_back(intern(domain_names, w.domain));
}

WindowedDataset WindowedDataset::subset(std::span<const std::size_t> indices) const {
    WindowedDataset out;
    out.window = window;
    out.channels = channels;
    out.label_names = label_names;
    out.subject_names = subject_names;
    out.domain_names = domain_names;
    out.values.reserve(indices.size() * window * channels);
    for (auto i : indices) {
        auto v = window_values(i);
        out.values.insert(out.values.end(), v.begin(), v.end());
        out.labels.push_back(labels.at(i));
        out.subjects.push_back(subjects.at(i));
        out.domains.push_back(domains.at(i));
    }
    return out;
}

Tensor<float> WindowedDataset::batch(std::span<const std::size_t> indices) const {
    Tensor<float> out({indices.size(), window, channels});
    const std::size_t stride = window * channels;
    for (std::size_t b = 0; b < indices.size(); ++b) {
        auto v = window_values(indices[b]);
        std::copy(v.begin(), v.end(), out.data() + b * stride);
    }
    return out;
}

std::vector<int> WindowedDataset::labels_at(std::span<const std::size_t> indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(labels.at(i));
    return out;
}

std::optional<int> WindowedDataset::domain_index(const std::string& name) const {
    auto it = std::find(domain_names.begin(), domain_names.end(), name);
    if (it == domain_names.end()) return std::nullopt;
    return static_cast<int>(it - domain_names.begin());
}

WindowedDataset build_dataset(std::span<const Recording> recordings, const LabelVocabulary& vocabulary,
                              std::size_t window, double overlap) {
    std::vector<const Recording*> order;
    for (const auto& r : recordings) order.push_back(&r);
    std::stable_sort(order.begin(), order.end(), [](const Recording* a, const Recording* b) { return a->id < b->id; });
    WindowedDataset ds;
    ds.window = window;
    ds.label_names = vocabulary.names();
    for (const Recording* rec : order)
        for (const auto& w : make_windows(*rec, window, overlap)) ds.append(w);
    return ds;
}

NormStats compute_norm_stats(const WindowedDataset& ds, std::span<const std::size_t> train) {
    if (train.empty()) throw ConfigError("normalisation needs a non-empty training split");
    NormStats stats;
    std::array<double, kChannels> sum{}, sq{};
    const double n = static_cast<double>(train.size() * ds.window);
    for (auto i : train) {
        auto v = ds.window_values(i);
        for (std::size_t t = 0; t < ds.window; ++t)
            for (std::size_t c = 0; c < kChannels; ++c) sum[c] += v[t * kChannels + c];
    }
    for (std::size_t c = 0; c < kChannels; ++c) stats.mean[c] = sum[c] / n;
    for (auto i : train) {
        auto v = ds.window_values(i);
        for (std::size_t t = 0; t < ds.window; ++t)
            for (std::size_t c = 0; c < kChannels; ++c) {
                const double d = v[t * kChannels + c] - stats.mean[c];
                sq[c] += d * d;
            }
    }
    for (std::size_t c = 0; c < kChannels; ++c) stats.std[c] = std::sqrt(sq[c] / n);
    return stats;
}

void apply_norm(WindowedDataset& ds, const NormStats& stats) {
    const std::size_t stride = ds.window * kChannels;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        float* v = ds.values.data() + i * stride;
        NormStats local = stats;
        if (stats.mode == NormMode::window) {
            const std::array<std::size_t, 1> one{i};
            local = compute_norm_stats(ds, one);
        }
        for (std::size_t t = 0; t < ds.window; ++t)
            for (std::size_t c = 0; c < kChannels; ++c) {
                float& x = v[t * kChannels + c];
                x = static_cast<float>((x - local.mean[c]) / (local.std[c] + kNormEpsilon));
            }
    }
}

NormStats z_normalize(WindowedDataset& ds, std::span<const std::size_t> train, NormMode mode) {
    NormStats stats;
    if (mode == NormMode::dataset) stats = compute_norm_stats(ds, train);
    stats.mode = mode;
    apply_norm(ds, stats);
    return stats;
}

void SplitSpec::validate() const {
    for (double p : {train, val, test})
        if (p < 0.0 || p > 1.0) throw ConfigError("split proportions must lie in [0, 1]");
    if (std::abs(train + val + test - 1.0) > 1e-9) throw ConfigError("split proportions must sum to 1");
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw ConfigError("label fraction must lie in (0, 1], got " + std::to_string(fraction));
}

namespace {

std::size_t ceil_count(double fraction, std::size_t n) {
    return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
}

} // namespace

std::vector<std::size_t> stratified_subsample(std::span<const std::size_t> pool, std::span<const int> labels,
                                              std::size_t num_classes, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw ConfigError("label fraction must lie in (0, 1], got " + std::to_string(fraction));
    std::vector<std::vector<std::size_t>> per_class(num_classes);
    for (auto i : pool) {
        const int l = labels[i];
        if (l < 0 || static_cast<std::size_t>(l) >= num_classes) throw IndexError("label " + std::to_string(l) + " out of range");
        per_class[static_cast<std::size_t>(l)].push_back(i);
    }
    SeedStream rng = SeedStream(seed).substream("subsample");
    std::vector<std::size_t> kept;
    for (auto& idx : per_class) {
        std::sort(idx.begin(), idx.end());
        std::shuffle(idx.begin(), idx.end(), rng.engine());
        const std::size_t keep = std::min(idx.size(), ceil_count(fraction, idx.size()));
        kept.insert(kept.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep));
    }
    std::sort(kept.begin(), kept.end());
    return kept;
}

Split split_and_subsample(std::span<const int> labels, std::span<const int> subjects, std::size_t num_classes,
                          const SplitSpec& spec) {
    spec.validate();
    std::vector<std::size_t> present(num_classes, 0);
    for (int l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= num_classes) throw IndexError("label " + std::to_string(l) + " out of range");
        ++present[static_cast<std::size_t>(l)];
    }
    for (std::size_t c = 0; c < num_classes; ++c)
        if (present[c] == 0) throw ConfigError("class " + std::to_string(c) + " is absent from the window pool");

    SeedStream rng = SeedStream(spec.seed).substream("split");
    Split split;
    const std::size_t n = labels.size();
    if (spec.grouping == Grouping::random) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng.engine());
        const auto n_train = static_cast<std::size_t>(std::llround(spec.train * static_cast<double>(n)));
        const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(spec.val * static_cast<double>(n))));
        split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
        split.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                         order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
        split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
    } else {
        if (subjects.size() != n) throw DimensionError("subject-grouped split needs one subject per window");
        std::map<int, std::vector<std::size_t>> by_subject;
        for (std::size_t i = 0; i < n; ++i) by_subject[subjects[i]].push_back(i);
        std::vector<int> ids;
        for (const auto& [s, _] : by_subject) ids.push_back(s);
        std::shuffle(ids.begin(), ids.end(), rng.engine());
        std::size_t assigned = 0;
        for (int s : ids) {
            const double pos = static_cast<double>(assigned) / static_cast<double>(n);
            auto& dst = pos < spec.train ? split.train : (pos < spec.train + spec.val ? split.val : split.test);
            dst.insert(dst.end(), by_subject[s].begin(), by_subject[s].end());
            assigned += by_subject[s].size();
        }
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.val.begin(), split.val.end());
    std::sort(split.test.begin(), split.test.end());
    if (spec.fraction < 1.0)
        split.train = stratified_subsample(split.train, labels, num_classes, spec.fraction, spec.seed);
    return split;
}

template <typename T>
Tensor<T> frame(const Tensor<T>& windows, std::size_t frame_length) {
    if (windows.rank() != 3) throw DimensionError("frame: expected B x W x C, got " + shape_str(windows.shape()));
    const std::size_t w = windows.dim(1);
    if (frame_length == 0 || w % frame_length != 0)
        throw ConfigError("frame: window length W=" + std::to_string(w) + " is not divisible by frame length L=" +
                          std::to_string(frame_length));
    return windows.reshaped({windows.dim(0), w / frame_length, frame_length, windows.dim(2)});
}

template <typename T>
Tensor<T> unframe(const Tensor<T>& frames) {
    if (frames.rank() != 4) throw DimensionError("unframe: expected B x N x L x C, got " + shape_str(frames.shape()));
    return frames.reshaped({frames.dim(0), frames.dim(1) * frames.dim(2), frames.dim(3)});
}

template Tensor<float> frame<float>(const Tensor<float>&, std::size_t);
template Tensor<double> frame<double>(const Tensor<double>&, std::size_t);
template Tensor<float> unframe<float>(const Tensor<float>&);
template Tensor<double> unframe<double>(const Tensor<double>&);

} // namespace harllm::data
