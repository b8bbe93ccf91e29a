#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vibefm {

enum class ErrorCode {
    ShapeMismatch,
    NonFinite,
    UnknownModality,
    StreamTooShort,
    MisalignedStreams,
    Indivisible,
    EmptyCollection,
    AlreadyNormalized,
    NonPositiveFactor,
    IndivisibleLength,
    InvalidArgument,
    NonFiniteActivation,
    DimMismatch,
    ZeroVector,
    EpochOutOfRange,
    EmptyDataset,
    Divergence,
    SingleClassDataset,
    StageMismatch,
    EmptySubset,
    TooSmall,
    ClassUnsplittable,
    RatioOutOfRange,
    LengthMismatch,
    Empty,
    MissingDomain,
    NyquistViolation,
    Io,
    ConfigInvalid,
    BadCheckpoint,
};

std::string_view to_string(ErrorCode code);

/// Exception carrying a machine-checkable error code alongside the message.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code)
    {
    }

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message)
{
    throw Error(code, message);
}

} // namespace vibefm
