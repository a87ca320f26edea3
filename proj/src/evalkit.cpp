#include "tinyquant/evalkit.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

namespace tinyquant {

ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& truth) {
    if (preds.size() != truth.size()) {
        throw Error(ErrorKind::ShapeMismatch,
                    "confusion: " + std::to_string(preds.size()) + " predictions vs " +
                        std::to_string(truth.size()) + " labels");
    }
    if (preds.empty()) {
        throw Error(ErrorKind::DataError, "confusion: no samples");
    }
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const bool pred_pos = preds[i] == 1;
        const bool true_pos = truth[i] == 1;
        if (pred_pos && true_pos) ++cm.tp;
        if (pred_pos && !true_pos) ++cm.fp;
        if (!pred_pos && !true_pos) ++cm.tn;
        if (!pred_pos && true_pos) ++cm.fn;
    }
    return cm;
}

namespace {

ClassMetrics class_metrics(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
    ClassMetrics m;
    if (tp + fp > 0) {
        m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    } else {
        m.degenerate = true;
    }
    if (tp + fn > 0) {
        m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    } else {
        m.degenerate = true;
    }
    if (m.precision + m.recall > 0.0) {
        m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    }
    return m;
}

std::string fixed(double v, int places) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(places) << v;
    return out.str();
}

}  // namespace

ClassificationReport report(const ConfusionMatrix& cm) {
    if (cm.total() <= 0) {
        throw Error(ErrorKind::DataError, "report: confusion matrix is empty");
    }
    ClassificationReport rep;
    rep.total = cm.total();
    rep.mask = class_metrics(cm.tp, cm.fp, cm.fn);
    rep.no_mask = class_metrics(cm.tn, cm.fn, cm.fp);  // roles swapped
    rep.accuracy = static_cast<double>(cm.tp + cm.tn) / static_cast<double>(rep.total);
    return rep;
}

CompareReport compare(const EvalRun& float_run, const EvalRun& int8_run) {
    if (float_run.truth != int8_run.truth) {
        throw Error(ErrorKind::DataError, "compare: runs must use the same evaluation set");
    }
    CompareReport rep;
    rep.float32_report = report(confusion(float_run.preds, float_run.truth));
    rep.int8_report = report(confusion(int8_run.preds, int8_run.truth));
    rep.accuracy_delta_pts = 100.0 * (rep.int8_report.accuracy - rep.float32_report.accuracy);
    std::int64_t agree = 0;
    for (std::size_t i = 0; i < float_run.preds.size(); ++i) {
        agree += float_run.preds[i] == int8_run.preds[i];
    }
    rep.agreement = static_cast<double>(agree) / static_cast<double>(float_run.preds.size());
    return rep;
}

std::string confusion_text(const ConfusionMatrix& cm) {
    std::ostringstream out;
    out << std::setw(16) << "" << std::setw(12) << "pred:mask" << std::setw(14) << "pred:no_mask"
        << '\n';
    out << std::setw(16) << std::left << "actual:mask" << std::right << std::setw(12) << cm.tp
        << std::setw(14) << cm.fn << '\n';
    out << std::setw(16) << std::left << "actual:no_mask" << std::right << std::setw(12) << cm.fp
        << std::setw(14) << cm.tn << '\n';
    return out.str();
}

std::string report_text(const ClassificationReport& rep) {
    std::ostringstream out;
    out << "accuracy: " << fixed(rep.accuracy * 100.0, 2) << "% (" << rep.total << " samples)\n";
    out << std::left << std::setw(10) << "class" << std::right << std::setw(10) << "precision"
        << std::setw(8) << "recall" << std::setw(8) << "f1" << '\n';
    auto row = [&](const char* name, const ClassMetrics& m) {
        out << std::left << std::setw(10) << name << std::right << std::setw(10)
            << fixed(m.precision, 2) << std::setw(8) << fixed(m.recall, 2) << std::setw(8)
            << fixed(m.f1, 2) << (m.degenerate ? "  [degenerate]" : "") << '\n';
    };
    row("mask", rep.mask);
    row("no_mask", rep.no_mask);
    return out.str();
}

std::string report_csv(const ClassificationReport& rep) {
    std::ostringstream out;
    out << "class,precision,recall,f1,degenerate\n";
    auto row = [&](const char* name, const ClassMetrics& m) {
        out << name << ',' << fixed(m.precision, 4) << ',' << fixed(m.recall, 4) << ','
            << fixed(m.f1, 4) << ',' << (m.degenerate ? 1 : 0) << '\n';
    };
    row("mask", rep.mask);
    row("no_mask", rep.no_mask);
    out << "accuracy," << fixed(rep.accuracy, 4) << ",,,\n";
    return out.str();
}

std::string compare_text(const CompareReport& rep) {
    std::ostringstream out;
    out << "float32 accuracy: " << fixed(rep.float32_report.accuracy * 100.0, 2) << "%\n";
    out << "int8 accuracy:    " << fixed(rep.int8_report.accuracy * 100.0, 2) << "%\n";
    out << "accuracy delta:   " << (rep.accuracy_delta_pts >= 0 ? "+" : "")
        << fixed(rep.accuracy_delta_pts, 2) << " pts (int8 - float32)\n";
    out << "prediction agreement: " << fixed(rep.agreement * 100.0, 2) << "%\n";
    return out.str();
}

std::string compare_csv(const CompareReport& rep) {
    std::ostringstream out;
    out << "metric,value\n";
    out << "float32_accuracy," << fixed(rep.float32_report.accuracy, 4) << '\n';
    out << "int8_accuracy," << fixed(rep.int8_report.accuracy, 4) << '\n';
    out << "accuracy_delta_pts," << fixed(rep.accuracy_delta_pts, 4) << '\n';
    out << "agreement," << fixed(rep.agreement, 4) << '\n';
    return out.str();
}

}  // namespace tinyquant
