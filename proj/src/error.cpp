#include "steer/error.hpp"

namespace steer {

std::string_view error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument:    return "InvalidArgument";
        case ErrorCode::Io:                 return "Io";
        case ErrorCode::ParseError:         return "ParseError";
        case ErrorCode::AllZeroMatrix:      return "AllZeroMatrix";
        case ErrorCode::DidNotConverge:     return "DidNotConverge";
        case ErrorCode::DimMismatch:        return "DimMismatch";
        case ErrorCode::SingleClass:        return "SingleClass";
        case ErrorCode::MissingTensor:      return "MissingTensor";
        case ErrorCode::ShapeMismatch:      return "ShapeMismatch";
        case ErrorCode::NonFiniteWeight:    return "NonFiniteWeight";
        case ErrorCode::SequenceTooLong:    return "SequenceTooLong";
        case ErrorCode::LayerOutOfRange:    return "LayerOutOfRange";
        case ErrorCode::EmptyContinuation:  return "EmptyContinuation";
        case ErrorCode::MalformedRecord:    return "MalformedRecord";
        case ErrorCode::EmptyDataset:       return "EmptyDataset";
        case ErrorCode::InvariantViolation: return "InvariantViolation";
        case ErrorCode::MissingRoles:       return "MissingRoles";
        case ErrorCode::MissingVector:      return "MissingVector";
        case ErrorCode::AlreadyDecorated:   return "AlreadyDecorated";
    }
    return "Unknown";
}

} // namespace steer
