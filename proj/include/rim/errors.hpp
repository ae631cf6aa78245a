#pragma once

#include <stdexcept>
#include <string>

namespace rim {

/// Base of every recoverable error raised by the library. Argument errors use
/// std::invalid_argument directly.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

/// Checkpoint written by a different format version or architecture.
class IncompatibleError : public Error {
public:
    using Error::Error;
};

class ChecksumError : public Error {
public:
    using Error::Error;
};

class DegenerateEmbeddingError : public Error {
public:
    using Error::Error;
};

/// A training phase produced a NaN/Inf loss.
class NonFiniteLossError : public Error {
public:
    NonFiniteLossError(const std::string& phase, double value)
        : Error("non-finite loss in phase '" + phase + "': " + std::to_string(value)), phase_(phase) {}
    const std::string& phase() const noexcept { return phase_; }

private:
    std::string phase_;
};

}  // namespace rim
