#pragma once

#include <stdexcept>
#include <string>

namespace s2s {

/// Base class for every error thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Tensor shape or rank disagreement. Messages always name the offending shapes.
struct ShapeError : Error {
    using Error::Error;
};

/// Out-of-range ids, empty inputs, invalid argument values.
struct ValueError : Error {
    using Error::Error;
};

/// Malformed input files: corpus lines, vocabulary files, encoded datasets,
/// invalid UTF-8. Mapped to exit code 2 by the CLI.
struct DataError : Error {
    using Error::Error;
};

/// Checkpoint problems, reported distinctly by kind.
struct CheckpointError : DataError {
    enum class Kind { io, version, fingerprint, corrupt };

    CheckpointError(Kind k, const std::string& msg) : DataError(msg), kind(k) {}

    Kind kind;
};

}  // namespace s2s
