// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace harllm {

/// Seeded random stream. Substreams are derived by name so adding a consumer
/// never shifts the numbers another consumer sees.
class SeedStream {
public:
    explicit SeedStream(std::uint64_t seed) : seed_(seed), engine_(mix(seed)) {}

    std::uint64_t seed() const noexcept { return seed_; }

    SeedStream substream(std::string_view name) const { return SeedStream(mix(seed_ ^ fnv1a(name))); }
    SeedStream substream(std::uint64_t index) const {
        return SeedStream(mix(seed_ + 0x9E3779B97F4A7C15ULL * (index + 1)));
    }

    std::mt19937_64& engine() noexcept { return engine_; }

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    double normal(double mean, double stddev) {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }
    std::uint64_t next() { return engine_(); }

private:
    static std::uint64_t mix(std::uint64_t x) {
        // splitmix64 finaliser
        x += 0x9E3779B97F4A7C15ULL;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
        return x ^ (x >> 31);
    }
    static std::uint64_t fnv1a(std::string_view s) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

} // namespace harllm
