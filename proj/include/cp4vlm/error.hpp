#pragma once

#include <stdexcept>
#include <string>

namespace cp4vlm {

// Error classes map one-to-one onto the CLI exit codes.
enum class ErrorKind : int {
    Config = 1,
    Io = 2,
    Numeric = 3,
    Internal = 4,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }
    int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
    ErrorKind kind_;
};

inline const char* error_prefix(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Config: return "error[config]";
        case ErrorKind::Io: return "error[io]";
        case ErrorKind::Numeric: return "error[numeric]";
        case ErrorKind::Internal: return "error[internal]";
    }
    return "error";
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

} // namespace cp4vlm
