// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace harllm {

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
};

struct EvalReport {
    std::size_t num_classes = 0;
    std::size_t total = 0;
    double weighted_f1 = 0.0;
    double accuracy = 0.0;
    std::vector<ClassMetrics> per_class;
    std::vector<std::size_t> confusion; // K x K, rows = truth, columns = prediction
    std::vector<std::string> labels;

    std::size_t confusion_at(std::size_t truth, std::size_t pred) const { return confusion.at(truth * num_classes + pred); }
};

/// Throws IndexError for labels outside [0, K).
std::vector<std::size_t> confusion_matrix(std::span<const int> y_true, std::span<const int> y_pred, std::size_t k);

/// Per-class P/R/F1 with zero-denominator ratios defined as 0; weighted F1 is
/// sum_c support_c / total * F1_c. Throws MetricError on empty input.
EvalReport compute_report(std::span<const int> y_true, std::span<const int> y_pred, std::size_t k);

double weighted_f1(std::span<const int> y_true, std::span<const int> y_pred, std::size_t k);
double accuracy(std::span<const int> y_true, std::span<const int> y_pred);

nlohmann::json report_to_json(const EvalReport& report);

} // namespace harllm
