// SPDX-License-Identifier: Apache-2.0
//
// Single-file tensor archive:
//   bytes [0, 8)      u64 little-endian header length n
//   bytes [8, 8 + n)  UTF-8 JSON: name -> {"dtype": "F32", "shape": [...], "data_offsets": [begin, end]}
//                     plus an optional "__metadata__" string map
//   remainder         concatenated little-endian payloads, offsets relative to its start
// This is the layout pretrained transformer weights are commonly shipped in.
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "harllm/tensor.hpp"

namespace harllm {

struct ArchiveTensor {
    Shape shape;
    std::vector<float> data;
};

using TensorMap = std::map<std::string, ArchiveTensor>;

/// Entries are written in name order; the header is space-padded to a multiple of 8 bytes.
void save_tensor_archive(const std::filesystem::path& file, const TensorMap& tensors,
                         const std::map<std::string, std::string>& metadata = {});

/// Throws CheckpointError on a malformed header, unsupported dtype or
/// out-of-range offsets, naming the tensor concerned.
TensorMap load_tensor_archive(const std::filesystem::path& file,
                              std::map<std::string, std::string>* metadata = nullptr);

} // namespace harllm
