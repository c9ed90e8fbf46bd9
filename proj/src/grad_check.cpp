// SPDX-License-Identifier: Apache-2.0
#include "harllm/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "harllm/error.hpp"

namespace harllm {

GradCheckResult grad_check(const std::function<double()>& loss, std::span<const GradCheckTarget> targets,
                           double step) {
    auto eval = [&] {
        const double v = loss();
        if (!std::isfinite(v)) throw NumericError("grad_check: loss is not finite");
        return v;
    };
    GradCheckResult result;
    for (const auto& target : targets) {
        if (target.values.size() != target.analytic.size())
            throw DimensionError("grad_check: '" + target.name + "' has " + std::to_string(target.values.size()) +
                                 " values but " + std::to_string(target.analytic.size()) + " gradients");
        for (std::size_t i = 0; i < target.values.size(); ++i) {
            const double saved = target.values[i];
            target.values[i] = saved + step;
            const double plus = eval();
            target.values[i] = saved - step;
            const double minus = eval();
            target.values[i] = saved;
            const double numeric = (plus - minus) / (2.0 * step);
            const double analytic = target.analytic[i];
            const double rel = std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
            ++result.coordinates;
            if (result.coordinates == 1 || rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_param = target.name;
                result.worst_index = i;
                result.analytic = analytic;
                result.numeric = numeric;
            }
        }
    }
    return result;
}

} // namespace harllm
