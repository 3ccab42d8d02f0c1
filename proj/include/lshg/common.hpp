#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lshg {

// Error taxonomy. Exit-code mapping lives in the CLI: validation/usage -> 1,
// numeric gate -> 2, I/O -> 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
    using Error::Error;
};
struct GeometryError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct StatsError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};
struct ParseError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};
struct FormatError : IoError {
    using IoError::IoError;
};
struct CompatError : Error {
    using Error::Error;
};
// Enumerated count disagreeing with the closed-form audit.
struct InternalConsistencyError : Error {
    using Error::Error;
};

}  // namespace lshg
