// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace harllm {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t coordinates = 0;
};

/// One parameter block: live values (perturbed in place, restored afterwards)
/// and the analytic gradient computed for them.
struct GradCheckTarget {
    std::string name;
    std::span<double> values;
    std::span<const double> analytic;
};

/// Central-difference check. Relative error per coordinate is
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|); the maximum is
/// reported. Throws NumericError when `loss` returns a non-finite value.
GradCheckResult grad_check(const std::function<double()>& loss, std::span<const GradCheckTarget> targets,
                           double step = 1e-5);

inline GradCheckResult grad_check(const std::function<double()>& loss, std::span<double> values,
                                  std::span<const double> analytic, double step = 1e-5) {
    const GradCheckTarget target{"param", values, analytic};
    return grad_check(loss, std::span<const GradCheckTarget>(&target, 1), step);
}

} // namespace harllm
