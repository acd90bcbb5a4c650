#pragma once

#include <stdexcept>
#include <string>

namespace stimkit {

// Root of every error raised by the library. The CLI maps subclasses onto
// exit codes, the service onto HTTP statuses.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A parameter is outside its permitted range. `field()` names the offender.
class ValidationError : public Error {
public:
    ValidationError(std::string field, const std::string& what)
        : Error(field + ": " + what), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

// Requested current exceeds the hardware safety limit.
class SafetyError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// Pulses cannot be placed without overlapping.
class SchedulingError : public Error {
public:
    using Error::Error;
};

// Inconsistent setup: missing reference calibration, no source/sink, ...
class ConfigurationError : public Error {
public:
    using Error::Error;
};

// Operation not allowed in the current session state.
class StateError : public Error {
public:
    using Error::Error;
};

// A ratio or prediction would divide by a zero-energy profile.
class DegenerateProfileError : public Error {
public:
    using Error::Error;
};

// R² requested over a sample with zero variance.
class UndefinedVarianceError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    enum class Kind { Magic, Length, Checksum, Version, Opcode, Syntax };

    ParseError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace stimkit
