/*
 * errors.hpp — exception taxonomy shared by all gmflow modules.
 *
 * Every error that can cross the C API boundary has a distinct type here so
 * the wrapper can map it onto a stable status code.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace gmflow {

/// Malformed caller input: non-finite values, dimension mismatch, bad shapes.
class InvalidInputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Evaluation requested outside the supported time clamp [t_min, 1-t_min].
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// JSON (config/mixture/schedule) failed to parse or validate.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A required geometric construction does not exist for these parameters
/// (e.g. the zero-thrust hyperplane has no admissible root).
class ConstructionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A trajectory exceeded the divergence guard; carries the failing step.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, int step, double magnitude)
        : std::runtime_error(what), step(step), magnitude(magnitude) {}
    int step;
    double magnitude;
};

/// Filesystem/serialization failure while persisting artifacts.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace gmflow
