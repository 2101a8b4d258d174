#pragma once

#include <stdexcept>
#include <string>

namespace slotlab {

// Base for all library errors. Catch this to map any failure to a CLI exit code.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape or size mismatch between arguments.
struct DimensionError : Error {
    using Error::Error;
};

// Invalid or inconsistent configuration (unknown keys, bad values, bad file headers).
struct ConfigError : Error {
    using Error::Error;
};

// Non-finite values, singular systems, or other numeric breakdowns.
struct NumericError : Error {
    using Error::Error;
};

// An iterative routine exhausted its budget without meeting its stopping rule.
struct ConvergenceError : Error {
    ConvergenceError(const std::string& msg, double last_residual)
        : Error(msg), last_residual(last_residual) {}
    double last_residual = 0.0;
};

// A requested scheme/order is not available for the given object.
struct CapabilityError : Error {
    using Error::Error;
};

// A stated input contract was violated (checked preconditions).
struct PreconditionError : Error {
    using Error::Error;
};

// A split references a slot bin with no in-distribution occurrence.
struct SupportError : Error {
    SupportError(const std::string& msg, int slot) : Error(msg), slot(slot) {}
    int slot = -1;
};

// A construction problem has no solution for the given inputs.
struct InfeasibleError : Error {
    InfeasibleError(const std::string& msg, int column) : Error(msg), column(column) {}
    int column = -1;
};

// File I/O failure or malformed on-disk data.
struct IoError : Error {
    using Error::Error;
};

} // namespace slotlab
