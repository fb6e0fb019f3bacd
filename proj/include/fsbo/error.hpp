#pragma once

#include <stdexcept>
#include <string>

namespace fsbo {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    /// Short machine-readable category, used by the CLI error JSON.
    virtual const char* kind() const noexcept { return "error"; }
};

class ValidationError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "validation"; }
};

class LoadError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "load"; }
};

class NumericalError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "numerical"; }
};

class OffGridError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "off-grid"; }
};

class DegenerateTaskError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "degenerate-task"; }
};

class CheckpointError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "checkpoint"; }
};

class UsageError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "usage"; }
};

} // namespace fsbo
