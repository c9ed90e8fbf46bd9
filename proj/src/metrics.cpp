// SPDX-License-Identifier: Apache-2.0
#include "harllm/metrics.hpp"

#include "harllm/error.hpp"

namespace harllm {

std::vector<std::size_t> confusion_matrix(std::span<const int> y_true, std::span<const int> y_pred, std::size_t k) {
    if (y_true.size() != y_pred.size())
        throw DimensionError("metrics: " + std::to_string(y_true.size()) + " labels vs " +
                             std::to_string(y_pred.size()) + " predictions");
    std::vector<std::size_t> cm(k * k, 0);
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        const int t = y_true[i], p = y_pred[i];
        if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= k || static_cast<std::size_t>(p) >= k)
            throw IndexError("metrics: label pair (" + std::to_string(t) + ", " + std::to_string(p) + ") outside [0, " +
                             std::to_string(k) + ")");
        ++cm[static_cast<std::size_t>(t) * k + static_cast<std::size_t>(p)];
    }
    return cm;
}

EvalReport compute_report(std::span<const int> y_true, std::span<const int> y_pred, std::size_t k) {
    if (y_true.empty()) throw MetricError("metrics: undefined on empty input");
    EvalReport r;
    r.num_classes = k;
    r.total = y_true.size();
    r.confusion = confusion_matrix(y_true, y_pred, k);
    r.per_class.resize(k);
    std::size_t correct = 0;
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t tp = r.confusion[c * k + c], predicted = 0, actual = 0;
        for (std::size_t j = 0; j < k; ++j) {
            predicted += r.confusion[j * k + c];
            actual += r.confusion[c * k + j];
        }
        ClassMetrics& m = r.per_class[c];
        m.support = actual;
        m.precision = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
        m.recall = actual ? static_cast<double>(tp) / static_cast<double>(actual) : 0.0;
        m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
        r.weighted_f1 += static_cast<double>(actual) / static_cast<double>(r.total) * m.f1;
        correct += tp;
    }
    r.accuracy = static_cast<double>(correct) / static_cast<double>(r.total);
    return r;
}

double weighted_f1(std::span<const int> y_true, std::span<const int> y_pred, std::size_t k) {
    return compute_report(y_true, y_pred, k).weighted_f1;
}

double accuracy(std::span<const int> y_true, std::span<const int> y_pred) {
    if (y_true.empty()) throw MetricError("metrics: undefined on empty input");
    if (y_true.size() != y_pred.size()) throw DimensionError("metrics: label/prediction count mismatch");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < y_true.size(); ++i) correct += y_true[i] == y_pred[i];
    return static_cast<double>(correct) / static_cast<double>(y_true.size());
}

nlohmann::json report_to_json(const EvalReport& r) {
    nlohmann::json per_class = nlohmann::json::array();
    for (std::size_t c = 0; c < r.num_classes; ++c) {
        const auto& m = r.per_class[c];
        per_class.push_back({{"label", c < r.labels.size() ? r.labels[c] : std::to_string(c)},
                             {"precision", m.precision},
                             {"recall", m.recall},
                             {"f1", m.f1},
                             {"support", m.support}});
    }
    nlohmann::json cm = nlohmann::json::array();
    for (std::size_t t = 0; t < r.num_classes; ++t) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t p = 0; p < r.num_classes; ++p) row.push_back(r.confusion_at(t, p));
        cm.push_back(row);
    }
    return {{"total", r.total},
            {"weighted_f1", r.weighted_f1},
            {"accuracy", r.accuracy},
            {"per_class", per_class},
            {"confusion_matrix", cm}};
}

} // namespace harllm
