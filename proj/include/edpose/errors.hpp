#pragma once

#include <stdexcept>
#include <string>

namespace edpose {

/// Error taxonomy. The CLI maps each type to a stable machine-parsable
/// prefix (error[E_CONFIG], error[E_IO], ...) and a nonzero exit code.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& msg)
        : std::runtime_error(msg), code_(std::move(code)) {}
    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("E_CONFIG", msg) {}
};

struct SchemaError : Error {
    explicit SchemaError(const std::string& msg) : Error("E_SCHEMA", msg) {}
};

struct ParseError : Error {
    explicit ParseError(const std::string& msg) : Error("E_PARSE", msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("E_IO", msg) {}
};

struct DomainError : Error {
    explicit DomainError(const std::string& msg) : Error("E_DOMAIN", msg) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error("E_SHAPE", msg) {}
};

struct NonFiniteLossError : Error {
    explicit NonFiniteLossError(const std::string& msg) : Error("E_NONFINITE", msg) {}
};

}  // namespace edpose
