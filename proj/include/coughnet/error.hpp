#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace coughnet {

enum class ErrorCode {
    IoError,
    MalformedWav,
    UnsupportedEncoding,
    EmptyAudio,
    NegativeFrequency,
    ClipTooShort,
    InvalidProfile,
    DimensionMismatch,
    ShapeMismatch,
    InvalidRate,
    LabelOutOfRange,
    NonFiniteGradient,
    InputTooSmall,
    CorruptModelFile,
    VersionMismatch,
    ParseError,
    UnknownLabel,
    DuplicatePath,
    ClassTooSmall,
    NonFiniteLoss,
    EmptySplit,
    EmptyMatrix,
    EmptyRow,
    TaskMismatch,
    InvalidArgument,
};

constexpr std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::MalformedWav: return "MalformedWav";
    case ErrorCode::UnsupportedEncoding: return "UnsupportedEncoding";
    case ErrorCode::EmptyAudio: return "EmptyAudio";
    case ErrorCode::NegativeFrequency: return "NegativeFrequency";
    case ErrorCode::ClipTooShort: return "ClipTooShort";
    case ErrorCode::InvalidProfile: return "InvalidProfile";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidRate: return "InvalidRate";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::InputTooSmall: return "InputTooSmall";
    case ErrorCode::CorruptModelFile: return "CorruptModelFile";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::DuplicatePath: return "DuplicatePath";
    case ErrorCode::ClassTooSmall: return "ClassTooSmall";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::EmptyMatrix: return "EmptyMatrix";
    case ErrorCode::EmptyRow: return "EmptyRow";
    case ErrorCode::TaskMismatch: return "TaskMismatch";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI exit-code mapping) can branch without string matching.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

} // namespace coughnet
