#pragma once

#include <stdexcept>
#include <string>

namespace tinyquant {

// Error taxonomy shared across the toolchain. The CLI maps kinds onto exit
// codes (usage/data problems -> 2, numeric/internal failures -> 1).
enum class ErrorKind {
    InvalidQuantParams,
    ShapeMismatch,
    ConfigError,
    NotFound,
    DataError,
    NumericError,
    StateError,
    UnsupportedShape,
    BudgetExceeded,
    CalibrationIncomplete,
    FormatError,
    CorruptionError,
    VersionError,
    UsageError,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace tinyquant
