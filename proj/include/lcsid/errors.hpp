#pragma once

#include <stdexcept>
#include <string>

namespace lcsid {

// Each error category maps onto one CLI exit code.

/// Invalid arguments, inconsistent dimensions, malformed configuration.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A numerical kernel failed: non-convergence, lost definiteness, singular
/// sensitivity system.
class SolverError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File could not be opened, read, or parsed.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace lcsid
