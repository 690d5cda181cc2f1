#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace steer {

enum class ErrorCode {
    InvalidArgument,
    Io,
    ParseError,
    AllZeroMatrix,
    DidNotConverge,
    DimMismatch,
    SingleClass,
    MissingTensor,
    ShapeMismatch,
    NonFiniteWeight,
    SequenceTooLong,
    LayerOutOfRange,
    EmptyContinuation,
    MalformedRecord,
    EmptyDataset,
    InvariantViolation,
    MissingRoles,
    MissingVector,
    AlreadyDecorated,
};

std::string_view error_code_name(ErrorCode code);

// All toolkit failures derive from this; `code()` is stable and machine-readable.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string & message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace steer
