#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace gap {

/// Base class for every error raised by the library. The CLI maps the
/// subclasses onto process exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad arguments, violated preconditions, dimension mismatches.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Non-finite values, singular systems, NaN losses.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// A trajectory left the finite domain. Carries the offending step.
class Divergence : public NumericalError {
public:
    Divergence(const std::string& what, std::int64_t step)
        : NumericalError(what + " (step " + std::to_string(step) + ")"), step_(step) {}

    std::int64_t step() const noexcept { return step_; }

private:
    std::int64_t step_;
};

class IoError : public Error {
public:
    using Error::Error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw InvalidArgument(msg);
}

}  // namespace gap
