#pragma once

#include <stdexcept>
#include <string>

namespace survnet {

/// Invalid configuration or arguments. CLI exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Filesystem failure. CLI exit code 3.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed on-disk data (bad magic, truncation). CLI exit code 3.
struct FormatError : IoError {
    using IoError::IoError;
};

/// Well-formed data violating a domain constraint. CLI exit code 3.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Non-finite values encountered during optimization. CLI exit code 4.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Tensor or parameter dimension mismatch. CLI exit code 5.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace survnet
