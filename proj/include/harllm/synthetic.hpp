// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "harllm/data.hpp"

namespace harllm::data {

/// Multi-domain synthetic IMU generator. Class c oscillates at its own dominant
/// frequency with a class-specific amplitude profile and posture offset; each
/// domain applies a fixed channel rotation, gain, sensor bias and noise level.
struct SynthSpec {
    std::size_t n_classes = 4;
    std::size_t n_subjects = 4;
    std::size_t n_domains = 3;
    double rate_hz = 50.0;
    double segment_seconds = 60.0; // per class, per recording
    double noise = 0.35;
    double max_rotation_deg = 25.0;
    std::uint64_t seed = 0;
};

/// Dominant frequency of class c, in Hz.
double synth_class_frequency(std::size_t c);

/// One recording per (domain, subject), holding one segment per class in a
/// seeded order. Domains are named "d0", "d1", ...; labels index "class0", ...
std::vector<Recording> synth_generate(const SynthSpec& spec);

LabelVocabulary synth_vocabulary(std::size_t n_classes);

} // namespace harllm::data
