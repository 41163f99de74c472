#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace maskfocus {

enum class ErrorCode {
    UnsatisfiableSpec,
    MaskedInput,
    ShapeMismatch,
    EmptyMask,
    NonFinite,
    InvalidDistribution,
    IncompleteTrajectory,
    TooShort,
    KOutOfRange,
    GroupTooSmall,
    StaleSnapshot,
    InvalidArgument,
    Config,
    MalformedInput,
    Io,
};

std::string_view to_string(ErrorCode code) noexcept;

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, ErrorCode code, const char* what) {
    if (!condition) {
        throw Error(code, what);
    }
}

}  // namespace maskfocus
