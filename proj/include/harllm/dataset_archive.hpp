// SPDX-License-Identifier: Apache-2.0
//
// Prepared-dataset archive: a directory holding manifest.json plus raw
// little-endian blobs (windows.f32, labels.i32, subjects.i32, domains.i32,
// splits.u8). Windows are stored un-normalised; the manifest carries the
// statistics computed on the training split.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "harllm/data.hpp"

namespace harllm::data {

enum class SplitTag : std::uint8_t { train = 0, val = 1, test = 2 };

struct PreparedDataset {
    WindowedDataset windows;
    std::vector<SplitTag> splits; // one per window
    NormStats norm;
    std::uint64_t seed = 0;
    double overlap = 0.5;
    std::string source; // free-form provenance, e.g. "synthetic"

    std::vector<std::size_t> indices(SplitTag tag) const;
};

void write_prepared(const std::filesystem::path& dir, const PreparedDataset& ds);
PreparedDataset read_prepared(const std::filesystem::path& dir);

/// Little-endian blob helpers shared with the tensor archive.
void write_le_floats(std::ostream& out, const float* data, std::size_t n);
void read_le_floats(std::istream& in, float* data, std::size_t n);

} // namespace harllm::data
