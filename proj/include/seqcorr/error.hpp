#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace seqcorr {

enum class ErrorKind {
    InvalidScenario,
    InvalidHyperparameter,
    Shape,
    EmptySequence,
    LibraryMiss,
    DegenerateBelief,
    InfeasibleK,
    LibraryWrite,
    NotFound,
    PreconditionFailed,
    Gone,
    BadRequest,
};

inline std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::InvalidScenario: return "invalid-scenario";
        case ErrorKind::InvalidHyperparameter: return "invalid-hyperparameter";
        case ErrorKind::Shape: return "shape";
        case ErrorKind::EmptySequence: return "empty-sequence";
        case ErrorKind::LibraryMiss: return "library-miss";
        case ErrorKind::DegenerateBelief: return "degenerate-belief";
        case ErrorKind::InfeasibleK: return "infeasible-k";
        case ErrorKind::LibraryWrite: return "library-write";
        case ErrorKind::NotFound: return "not-found";
        case ErrorKind::PreconditionFailed: return "precondition-failed";
        case ErrorKind::Gone: return "gone";
        case ErrorKind::BadRequest: return "bad-request";
    }
    return "unknown";
}

/// Every failure raised by the library carries a kind so callers (CLI exit
/// codes, HTTP status mapping) can dispatch without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace seqcorr
