#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tinyquant/errors.hpp"

namespace tinyquant {

// Positive class = mask (label 1), everywhere.
struct ConfusionMatrix {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t tn = 0;
    std::int64_t fn = 0;

    std::int64_t total() const { return tp + fp + tn + fn; }
};

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    bool degenerate = false;  // some denominator was zero
};

struct ClassificationReport {
    ClassMetrics mask;     // label 1 as the positive class
    ClassMetrics no_mask;  // label 0 as the positive class (roles swapped)
    double accuracy = 0.0;
    std::int64_t total = 0;
};

// One model's predictions over a labeled set.
struct EvalRun {
    std::vector<int> preds;
    std::vector<int> truth;
};

struct CompareReport {
    ClassificationReport float32_report;
    ClassificationReport int8_report;
    double accuracy_delta_pts = 0.0;  // (int8 - float32) * 100
    double agreement = 0.0;           // fraction of identical predictions
};

ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& truth);
ClassificationReport report(const ConfusionMatrix& cm);
CompareReport compare(const EvalRun& float_run, const EvalRun& int8_run);

// 2x2 grid, rows = actual class, columns = predicted class.
std::string confusion_text(const ConfusionMatrix& cm);
std::string report_text(const ClassificationReport& rep);  // human, 2 decimals
std::string report_csv(const ClassificationReport& rep);   // machine, 4 decimals
std::string compare_text(const CompareReport& rep);
std::string compare_csv(const CompareReport& rep);

}  // namespace tinyquant
