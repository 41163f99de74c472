#include "maskfocus/error.hpp"

namespace maskfocus {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::UnsatisfiableSpec: return "UnsatisfiableSpec";
        case ErrorCode::MaskedInput: return "MaskedInput";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::EmptyMask: return "EmptyMask";
        case ErrorCode::NonFinite: return "NonFinite";
        case ErrorCode::InvalidDistribution: return "InvalidDistribution";
        case ErrorCode::IncompleteTrajectory: return "IncompleteTrajectory";
        case ErrorCode::TooShort: return "TooShort";
        case ErrorCode::KOutOfRange: return "KOutOfRange";
        case ErrorCode::GroupTooSmall: return "GroupTooSmall";
        case ErrorCode::StaleSnapshot: return "StaleSnapshot";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::Config: return "ConfigError";
        case ErrorCode::MalformedInput: return "MalformedInput";
        case ErrorCode::Io: return "IoError";
    }
    return "Unknown";
}

}  // namespace maskfocus
