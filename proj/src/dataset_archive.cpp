// SPDX-License-Identifier: Apache-2.0
#include "harllm/dataset_archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace harllm::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

std::uint32_t swap32(std::uint32_t u) {
    return (u >> 24) | ((u >> 8) & 0xFF00u) | ((u << 8) & 0xFF0000u) | (u << 24);
}

template <typename T>
void write_le(std::ostream& out, const T* data, std::size_t n) {
    static_assert(sizeof(T) == 4 || sizeof(T) == 1);
    if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
        out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(T)));
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            std::uint32_t u;
            std::memcpy(&u, data + i, 4);
            u = swap32(u);
            out.write(reinterpret_cast<const char*>(&u), 4);
        }
    }
}

template <typename T>
void read_le(std::istream& in, T* data, std::size_t n) {
    in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(T)));
    if constexpr (std::endian::native != std::endian::little && sizeof(T) == 4) {
        for (std::size_t i = 0; i < n; ++i) {
            std::uint32_t u;
            std::memcpy(&u, data + i, 4);
            u = swap32(u);
            std::memcpy(data + i, &u, 4);
        }
    }
}

template <typename T>
void write_blob(const fs::path& file, const std::vector<T>& v) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw Error("cannot write " + file.string());
    write_le(out, v.data(), v.size());
}

template <typename T>
std::vector<T> read_blob(const fs::path& file, std::size_t n) {
    std::ifstream in(file, std::ios::binary | std::ios::ate);
    if (!in) throw Error("prepared archive: missing " + file.string());
    if (static_cast<std::size_t>(in.tellg()) != n * sizeof(T))
        throw Error("prepared archive: " + file.filename().string() + " holds " + std::to_string(in.tellg()) +
                    " bytes, expected " + std::to_string(n * sizeof(T)));
    in.seekg(0);
    std::vector<T> v(n);
    read_le(in, v.data(), n);
    return v;
}

const char* split_name(SplitTag t) {
    switch (t) {
    case SplitTag::train: return "train";
    case SplitTag::val: return "val";
    case SplitTag::test: return "test";
    }
    return "?";
}

} // namespace

void write_le_floats(std::ostream& out, const float* data, std::size_t n) { write_le(out, data, n); }
void read_le_floats(std::istream& in, float* data, std::size_t n) { read_le(in, data, n); }

std::vector<std::size_t> PreparedDataset::indices(SplitTag tag) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < splits.size(); ++i)
        if (splits[i] == tag) out.push_back(i);
    return out;
}

void write_prepared(const fs::path& dir, const PreparedDataset& ds) {
    const auto& w = ds.windows;
    if (ds.splits.size() != w.size()) throw DimensionError("prepared archive: one split tag per window required");
    fs::create_directories(dir);

    json counts = json::object();
    for (auto tag : {SplitTag::train, SplitTag::val, SplitTag::test}) counts[split_name(tag)] = ds.indices(tag).size();
    json manifest = {
        {"format", "harllm-prepared"},
        {"version", kFormatVersion},
        {"count", w.size()},
        {"window", w.window},
        {"channels", w.channels},
        {"shape", {w.size(), w.window, w.channels}},
        {"label_vocabulary", w.label_names},
        {"subjects", w.subject_names},
        {"domains", w.domain_names},
        {"split_counts", counts},
        {"normalization",
         {{"mode", ds.norm.mode == NormMode::dataset ? "dataset" : "window"},
          {"mean", ds.norm.mean},
          {"std", ds.norm.std},
          {"epsilon", kNormEpsilon}}},
        {"seed", ds.seed},
        {"overlap", ds.overlap},
        {"source", ds.source},
        {"files",
         {{"windows", "windows.f32"},
          {"labels", "labels.i32"},
          {"subjects", "subjects.i32"},
          {"domains", "domains.i32"},
          {"splits", "splits.u8"}}},
    };
    {
        std::ofstream out(dir / "manifest.json", std::ios::binary);
        out << manifest.dump(2) << '\n';
    }
    write_blob(dir / "windows.f32", w.values);
    write_blob(dir / "labels.i32", w.labels);
    write_blob(dir / "subjects.i32", w.subjects);
    write_blob(dir / "domains.i32", w.domains);
    std::vector<std::uint8_t> tags(ds.splits.size());
    for (std::size_t i = 0; i < tags.size(); ++i) tags[i] = static_cast<std::uint8_t>(ds.splits[i]);
    write_blob(dir / "splits.u8", tags);
}

PreparedDataset read_prepared(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw Error("prepared archive: no manifest.json in " + dir.string());
    json m;
    try {
        m = json::parse(in);
    } catch (const json::exception& e) {
        throw Error("prepared archive: bad manifest: " + std::string(e.what()));
    }
    if (m.value("format", "") != "harllm-prepared") throw Error("prepared archive: unknown format in " + dir.string());

    PreparedDataset ds;
    auto& w = ds.windows;
    const std::size_t n = m.at("count").get<std::size_t>();
    w.window = m.at("window").get<std::size_t>();
    w.channels = m.at("channels").get<std::size_t>();
    if (w.channels != kChannels) throw Error("prepared archive: expected 6 channels");
    w.label_names = m.at("label_vocabulary").get<std::vector<std::string>>();
    w.subject_names = m.at("subjects").get<std::vector<std::string>>();
    w.domain_names = m.at("domains").get<std::vector<std::string>>();
    w.values = read_blob<float>(dir / "windows.f32", n * w.window * w.channels);
    w.labels = read_blob<int>(dir / "labels.i32", n);
    w.subjects = read_blob<int>(dir / "subjects.i32", n);
    w.domains = read_blob<int>(dir / "domains.i32", n);
    const auto tags = read_blob<std::uint8_t>(dir / "splits.u8", n);
    ds.splits.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (tags[i] > 2) throw Error("prepared archive: bad split tag at window " + std::to_string(i));
        ds.splits[i] = static_cast<SplitTag>(tags[i]);
    }
    const auto& norm = m.at("normalization");
    ds.norm.mode = norm.at("mode").get<std::string>() == "window" ? NormMode::window : NormMode::dataset;
    ds.norm.mean = norm.at("mean").get<std::array<double, kChannels>>();
    ds.norm.std = norm.at("std").get<std::array<double, kChannels>>();
    ds.seed = m.at("seed").get<std::uint64_t>();
    ds.overlap = m.at("overlap").get<double>();
    ds.source = m.value("source", "");
    return ds;
}

} // namespace harllm::data
