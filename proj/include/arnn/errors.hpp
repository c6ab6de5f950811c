#pragma once
#include <stdexcept>
#include <string>

namespace arnn {

// Base for all recoverable errors raised by the library. The CLI maps these
// to exit code 1 (validation/data error); anything else is an internal error.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Incompatible matrix/tensor shapes.
struct DimensionError : Error {
    using Error::Error;
};

// Out-of-range argument (e.g. dropout probability >= 1).
struct ParameterError : Error {
    using Error::Error;
};

// Invalid model/run configuration (e.g. window count not dividing length).
struct ConfigError : Error {
    using Error::Error;
};

// Malformed or inconsistent input data (CSV, manifest) or empty datasets.
struct DataError : Error {
    using Error::Error;
};

// Corrupt or mismatched checkpoint file.
struct FormatError : Error {
    using Error::Error;
};

// Operation invoked in an invalid order (e.g. backward without a forward).
struct StateError : Error {
    using Error::Error;
};

} // namespace arnn
