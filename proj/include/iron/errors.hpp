#pragma once

#include <stdexcept>
#include <string>

namespace iron {

/// Bad user-facing configuration (CLI options, config files, grids).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Precondition violation on an API call (dimension mismatch, bad range).
class InvalidInput : public std::invalid_argument {
public:
    explicit InvalidInput(const std::string& what) : std::invalid_argument(what) {}
};

/// Numerical degeneracy that should not occur on well-posed inputs.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace iron
