#pragma once

#include <stdexcept>
#include <string>

namespace actloop {

// Base class for every error raised by the library. Callers that only care
// about "something went wrong" catch this; the CLI maps subclasses to exit
// codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Input rejected because its shape or width does not match what the
// operation was configured for.
class ShapeError : public Error {
public:
    using Error::Error;
};

// A numeric value (gradient, loss, sampler state) went non-finite.
class NumericError : public Error {
public:
    using Error::Error;
};

// Bad user-supplied configuration or argument.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Domain / plan / wire document failed to parse or validate.
class ParseError : public Error {
public:
    using Error::Error;
};

// An operator was applied in a state where one of its pre literals is false.
class PreconditionError : public Error {
public:
    PreconditionError(std::string literal, const std::string& what)
        : Error(what), literal_(std::move(literal)) {}
    const std::string& literal() const noexcept { return literal_; }

private:
    std::string literal_;
};

// Planner could not reach the goal inside its search budget.
class NoPlanError : public Error {
public:
    using Error::Error;
};

// A plan was produced but failed symbolic validation.
class PlanValidationError : public NoPlanError {
public:
    using NoPlanError::NoPlanError;
};

// Remote backend failures.
class TransportError : public Error {
public:
    using Error::Error;
};

class SchemaError : public Error {
public:
    using Error::Error;
};

}  // namespace actloop
