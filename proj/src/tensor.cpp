#include "tinyquant/tensor.hpp"

namespace tinyquant {

void QuantParams::validate() const {
    if (scales.empty()) {
        throw Error(ErrorKind::InvalidQuantParams, "no scales");
    }
    for (float s : scales) {
        if (!(s > 0.0f) || !std::isfinite(s)) {
            throw Error(ErrorKind::InvalidQuantParams,
                        "scale must be positive and finite, got " + std::to_string(s));
        }
    }
    if (zero_point < -128 || zero_point > 127) {
        throw Error(ErrorKind::InvalidQuantParams,
                    "zero point " + std::to_string(zero_point) + " outside int8 range");
    }
    if (per_channel_form() && zero_point != 0) {
        throw Error(ErrorKind::InvalidQuantParams, "per-channel params must be symmetric");
    }
}

namespace detail {

void check_quant_layout(const Shape4& shape, const QuantParams& qp) {
    if (qp.per_channel_form() &&
        static_cast<std::int64_t>(qp.scales.size()) != static_cast<std::int64_t>(shape.c)) {
        throw Error(ErrorKind::ShapeMismatch,
                    "per-channel scale count " + std::to_string(qp.scales.size()) +
                        " does not match channel extent of " + shape.str());
    }
}

}  // namespace detail

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidQuantParams: return "invalid-quant-params";
        case ErrorKind::ShapeMismatch: return "shape-mismatch";
        case ErrorKind::ConfigError: return "config-error";
        case ErrorKind::NotFound: return "not-found";
        case ErrorKind::DataError: return "data-error";
        case ErrorKind::NumericError: return "numeric-error";
        case ErrorKind::StateError: return "state-error";
        case ErrorKind::UnsupportedShape: return "unsupported-shape";
        case ErrorKind::BudgetExceeded: return "budget-exceeded";
        case ErrorKind::CalibrationIncomplete: return "calibration-incomplete";
        case ErrorKind::FormatError: return "format-error";
        case ErrorKind::CorruptionError: return "corruption-error";
        case ErrorKind::VersionError: return "version-error";
        case ErrorKind::UsageError: return "usage-error";
    }
    return "error";
}

}  // namespace tinyquant
