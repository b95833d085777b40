#pragma once

#include <stdexcept>
#include <string>

namespace promptcl {

/// Invalid dimensions, depths, or option combinations supplied by the caller.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A session-stream or training-protocol contract was broken.
struct ProtocolError : std::runtime_error {
    explicit ProtocolError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A sequence no longer fits the encoder after prompt injection.
struct CapacityError : std::runtime_error {
    explicit CapacityError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed input data (empty class names, unknown characters, bad files).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical collapse detected (zero-norm embeddings and the like).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// An internal invariant failed; indicates a bug, not a user error.
struct InvariantError : std::logic_error {
    explicit InvariantError(const std::string& msg) : std::logic_error(msg) {}
};

} // namespace promptcl
