#pragma once

#include <stdexcept>
#include <string>

namespace hyperwell {

// Coarse classification used by the CLI to pick exit codes and by tests to
// assert on failure modes without string matching.
enum class ErrorKind {
    Io,
    Format,            // malformed file contents, byte-count mismatches
    UnsupportedFormat, // recognizable but outside the supported subset
    Dimension,         // shape mismatch between arrays
    DegenerateInput,   // inputs that leave nothing defined (all-invalid, no decay, ...)
    InvalidArgument,
    TuningFailure,
    InsufficientData,
    DegreesOfFreedom,
    Comparison,
    Geometry,
    Config,
    Contract, // caller violated a documented precondition
    Internal,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

    // User-facing problems exit with 1, internal defects with 2.
    bool is_user_error() const noexcept {
        return kind_ != ErrorKind::Internal && kind_ != ErrorKind::Contract;
    }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
    if (!condition) raise(kind, message);
}

} // namespace hyperwell
