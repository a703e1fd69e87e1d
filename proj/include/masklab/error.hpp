#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace masklab {

enum class ErrorKind {
    IoError,
    MalformedWav,
    UnsupportedFormat,
    InvalidSpec,
    InvalidConfig,
    TooShort,
    MalformedAlignment,
    GapOrOverlap,
    LengthMismatch,
    OutOfRange,
    NoFrames,
    NoEligiblePhonemes,
    InconsistentInputs,
    ShapeMismatch,
    TooLong,
    EmptyMask,
    NonFiniteLoss,
    DivergedLoss,
    VersionMismatch,
    CorruptBlob,
    LabelMismatch,
    SingleClass,
    EmptyEvalSet,
    NoInteriorFrames,
    ConfigError,
    StageFailure,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries one of the kinds above so
/// callers (and tests) can branch on it without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string &message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message),
          kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::MalformedWav: return "MalformedWav";
    case ErrorKind::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::TooShort: return "TooShort";
    case ErrorKind::MalformedAlignment: return "MalformedAlignment";
    case ErrorKind::GapOrOverlap: return "GapOrOverlap";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::NoFrames: return "NoFrames";
    case ErrorKind::NoEligiblePhonemes: return "NoEligiblePhonemes";
    case ErrorKind::InconsistentInputs: return "InconsistentInputs";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::TooLong: return "TooLong";
    case ErrorKind::EmptyMask: return "EmptyMask";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::DivergedLoss: return "DivergedLoss";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
    case ErrorKind::CorruptBlob: return "CorruptBlob";
    case ErrorKind::LabelMismatch: return "LabelMismatch";
    case ErrorKind::SingleClass: return "SingleClass";
    case ErrorKind::EmptyEvalSet: return "EmptyEvalSet";
    case ErrorKind::NoInteriorFrames: return "NoInteriorFrames";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::StageFailure: return "StageFailure";
    }
    return "Unknown";
}

} // namespace masklab
