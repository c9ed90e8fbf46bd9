// SPDX-License-Identifier: Apache-2.0
#include "harllm/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "harllm/rng.hpp"

namespace harllm::data {

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;
using Vec3 = std::array<double, 3>;

Mat3 axis_angle(Vec3 axis, double angle) {
    const double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
    for (auto& a : axis) a /= n;
    const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
    const auto [x, y, z] = axis;
    return {{{t * x * x + c, t * x * y - s * z, t * x * z + s * y},
             {t * x * y + s * z, t * y * y + c, t * y * z - s * x},
             {t * x * z - s * y, t * y * z + s * x, t * z * z + c}}};
}

Vec3 rotate(const Mat3& m, const Vec3& v) {
    Vec3 out{};
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) out[i] += m[i][j] * v[j];
    return out;
}

struct ClassProfile {
    double frequency;
    Vec3 acc_amp, gyro_amp, posture;
};

struct DomainProfile {
    Mat3 rotation;
    double gain;
    Vec3 acc_bias, gyro_bias;
    double noise;
};

double uniform(SeedStream& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

} // namespace

double synth_class_frequency(std::size_t c) { return 1.0 + 0.8 * static_cast<double>(c); }

LabelVocabulary synth_vocabulary(std::size_t n_classes) {
    std::vector<std::string> names;
    for (std::size_t c = 0; c < n_classes; ++c) names.push_back("class" + std::to_string(c));
    return LabelVocabulary(std::move(names));
}

std::vector<Recording> synth_generate(const SynthSpec& spec) {
    if (spec.n_classes < 2) throw ConfigError("synth_generate: need at least 2 classes");
    if (spec.n_subjects == 0 || spec.n_domains == 0) throw ConfigError("synth_generate: need subjects and domains");
    if (!(spec.rate_hz > 0.0) || !(spec.segment_seconds > 0.0)) throw ConfigError("synth_generate: rate and duration must be positive");
    const SeedStream root(spec.seed);

    std::vector<ClassProfile> classes;
    for (std::size_t c = 0; c < spec.n_classes; ++c) {
        SeedStream rng = root.substream("class").substream(c);
        ClassProfile p;
        p.frequency = synth_class_frequency(c);
        // acc_x keeps a large amplitude so its spectral peak survives rotation
        p.acc_amp = {uniform(rng, 0.8, 1.0), uniform(rng, 0.3, 1.0), uniform(rng, 0.3, 1.0)};
        p.gyro_amp = {uniform(rng, 0.3, 1.0), uniform(rng, 0.3, 1.0), uniform(rng, 0.3, 1.0)};
        Vec3 dir{rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1) + 2.0};
        const double n = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
        for (auto& d : dir) d /= n;
        p.posture = dir;
        classes.push_back(p);
    }

    std::vector<DomainProfile> domains;
    for (std::size_t d = 0; d < spec.n_domains; ++d) {
        SeedStream rng = root.substream("domain").substream(d);
        DomainProfile p;
        const double angle = uniform(rng, -1.0, 1.0) * spec.max_rotation_deg * std::numbers::pi / 180.0;
        p.rotation = axis_angle({rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1)}, angle);
        p.gain = uniform(rng, 0.75, 1.3);
        p.acc_bias = {uniform(rng, -0.2, 0.2), uniform(rng, -0.2, 0.2), uniform(rng, -0.2, 0.2)};
        p.gyro_bias = {uniform(rng, -0.1, 0.1), uniform(rng, -0.1, 0.1), uniform(rng, -0.1, 0.1)};
        p.noise = spec.noise * uniform(rng, 0.7, 1.5);
        domains.push_back(p);
    }

    const auto seg_len = static_cast<std::size_t>(std::llround(spec.segment_seconds * spec.rate_hz));
    const double two_pi = 2.0 * std::numbers::pi;
    std::vector<Recording> out;
    for (std::size_t d = 0; d < spec.n_domains; ++d) {
        const DomainProfile& dom = domains[d];
        for (std::size_t s = 0; s < spec.n_subjects; ++s) {
            SeedStream rng = root.substream("recording").substream(d * spec.n_subjects + s);
            Recording rec;
            rec.domain = "d" + std::to_string(d);
            rec.subject = "s" + std::to_string(s);
            rec.id = rec.domain + "_" + rec.subject;
            rec.rate_hz = spec.rate_hz;
            const double subject_scale = uniform(rng, 0.85, 1.15);

            std::vector<std::size_t> order(spec.n_classes);
            std::iota(order.begin(), order.end(), 0);
            std::shuffle(order.begin(), order.end(), rng.engine());
            for (std::size_t c : order) {
                const ClassProfile& cls = classes[c];
                const double freq = cls.frequency + uniform(rng, -0.08, 0.08);
                const double phase = uniform(rng, 0.0, two_pi);
                const double phase2 = uniform(rng, 0.0, two_pi);
                for (std::size_t i = 0; i < seg_len; ++i) {
                    const double t = static_cast<double>(i) / spec.rate_hz;
                    const double w1 = std::sin(two_pi * freq * t + phase);
                    const double w2 = std::sin(two_pi * 2.0 * freq * t + phase2);
                    const double w1c = std::cos(two_pi * freq * t + phase);
                    Vec3 acc{}, gyro{};
                    for (std::size_t j = 0; j < 3; ++j) {
                        acc[j] = cls.posture[j] + subject_scale * cls.acc_amp[j] * (w1 + 0.25 * w2);
                        gyro[j] = subject_scale * cls.gyro_amp[j] * (w1c + 0.2 * w2);
                    }
                    acc = rotate(dom.rotation, acc);
                    gyro = rotate(dom.rotation, gyro);
                    Sample sample{};
                    for (std::size_t j = 0; j < 3; ++j) {
                        sample[j] = static_cast<float>(dom.gain * acc[j] + dom.acc_bias[j] + dom.noise * rng.normal(0, 1));
                        sample[3 + j] =
                            static_cast<float>(dom.gain * gyro[j] + dom.gyro_bias[j] + dom.noise * rng.normal(0, 1));
                    }
                    rec.samples.push_back(sample);
                    rec.labels.push_back(static_cast<int>(c));
                }
            }
            out.push_back(std::move(rec));
        }
    }
    return out;
}

} // namespace harllm::data
