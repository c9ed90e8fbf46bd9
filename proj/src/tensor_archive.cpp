// SPDX-License-Identifier: Apache-2.0
#include "harllm/tensor_archive.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "harllm/dataset_archive.hpp"
#include "json.hpp"

namespace harllm {

using nlohmann::json;

namespace {

std::uint64_t to_little_endian(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::little) return v;
    std::uint64_t out = 0;
    for (int i = 0; i < 8; ++i) out = (out << 8) | ((v >> (8 * i)) & 0xFF);
    return out;
}

} // namespace

void save_tensor_archive(const std::filesystem::path& file, const TensorMap& tensors,
                         const std::map<std::string, std::string>& metadata) {
    // nlohmann::json orders object keys, so the header is canonical
    json header = json::object();
    if (!metadata.empty()) header["__metadata__"] = metadata;
    std::uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        if (t.data.size() != shape_numel(t.shape))
            throw CheckpointError("tensor '" + name + "': " + std::to_string(t.data.size()) + " values for shape " +
                                  shape_str(t.shape));
        const std::uint64_t bytes = t.data.size() * sizeof(float);
        header[name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + bytes}}};
        offset += bytes;
    }
    std::string text = header.dump();
    text.append((8 - text.size() % 8) % 8, ' ');

    std::ofstream out(file, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + file.string());
    std::uint64_t n = text.size();
    n = to_little_endian(n);
    out.write(reinterpret_cast<const char*>(&n), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : tensors) data::write_le_floats(out, t.data.data(), t.data.size());
    if (!out) throw CheckpointError("write failed: " + file.string());
}

TensorMap load_tensor_archive(const std::filesystem::path& file, std::map<std::string, std::string>* metadata) {
    std::ifstream in(file, std::ios::binary | std::ios::ate);
    if (!in) throw CheckpointError("cannot open " + file.string());
    const auto file_size = static_cast<std::uint64_t>(in.tellg());
    in.seekg(0);
    if (file_size < 8) throw CheckpointError(file.string() + ": shorter than the 8-byte header length");
    std::uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), 8);
    n = to_little_endian(n);
    if (n > file_size - 8) throw CheckpointError(file.string() + ": header length " + std::to_string(n) + " exceeds file");
    std::string text(n, '\0');
    in.read(text.data(), static_cast<std::streamsize>(n));

    json header;
    try {
        header = json::parse(text);
    } catch (const json::exception& e) {
        throw CheckpointError(file.string() + ": bad header JSON: " + e.what());
    }
    if (!header.is_object()) throw CheckpointError(file.string() + ": header is not a JSON object");

    const std::uint64_t payload = file_size - 8 - n;
    TensorMap out;
    for (const auto& [name, entry] : header.items()) {
        if (name == "__metadata__") {
            if (metadata)
                for (const auto& [k, v] : entry.items()) (*metadata)[k] = v.is_string() ? v.get<std::string>() : v.dump();
            continue;
        }
        try {
            const auto dtype = entry.at("dtype").get<std::string>();
            if (dtype != "F32") throw CheckpointError("tensor '" + name + "': unsupported dtype " + dtype);
            ArchiveTensor t;
            t.shape = entry.at("shape").get<Shape>();
            const auto offsets = entry.at("data_offsets").get<std::vector<std::uint64_t>>();
            if (offsets.size() != 2 || offsets[0] > offsets[1] || offsets[1] > payload)
                throw CheckpointError("tensor '" + name + "': data offsets out of range");
            const std::uint64_t numel = shape_numel(t.shape);
            if (offsets[1] - offsets[0] != numel * sizeof(float))
                throw CheckpointError("tensor '" + name + "': shape " + shape_str(t.shape) + " does not match " +
                                      std::to_string(offsets[1] - offsets[0]) + " payload bytes");
            t.data.resize(numel);
            in.seekg(static_cast<std::streamoff>(8 + n + offsets[0]));
            data::read_le_floats(in, t.data.data(), numel);
            if (!in) throw CheckpointError("tensor '" + name + "': truncated payload");
            out.emplace(name, std::move(t));
        } catch (const json::exception& e) {
            throw CheckpointError("tensor '" + name + "': malformed header entry: " + e.what());
        }
    }
    return out;
}

} // namespace harllm
