#pragma once

#include <stdexcept>
#include <string>

namespace vickam {

/// Error categories. The numeric values double as CLI exit codes.
enum class ErrorCode : int {
    usage = 2,
    format = 3,
    shape = 4,
    numeric = 5,
};

inline const char* error_code_name(ErrorCode code) {
    switch (code) {
    case ErrorCode::usage: return "usage";
    case ErrorCode::format: return "format";
    case ErrorCode::shape: return "shape";
    case ErrorCode::numeric: return "numeric";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message, std::string path = {})
        : std::runtime_error(message), code_(code), path_(std::move(path)) {}

    ErrorCode code() const noexcept { return code_; }
    const std::string& path() const noexcept { return path_; }

private:
    ErrorCode code_;
    std::string path_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message, const std::string& path = {}) {
    throw Error(code, message, path);
}

} // namespace vickam
