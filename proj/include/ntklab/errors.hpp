#pragma once

#include <stdexcept>
#include <string>

namespace ntklab {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller supplied an invalid argument or configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Something went wrong in the numerics (factorization, eigensolver, divergence).
class NumericalError : public Error {
public:
    using Error::Error;
};

class DomainError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

class DimensionError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

class ModeError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

class RangeError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

class EmptyGrid : public ConfigError {
public:
    using ConfigError::ConfigError;
};

class InsufficientTrials : public ConfigError {
public:
    using ConfigError::ConfigError;
};

class AsymmetryError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

class ConvergenceError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class FactorizationError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class DivergenceError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// CSV ingestion failure, carrying the 1-based row and column of the bad cell.
class ParseError : public ConfigError {
public:
    ParseError(const std::string& what, std::size_t row, std::size_t column)
        : ConfigError(what + " (row " + std::to_string(row) + ", column " + std::to_string(column) + ")"),
          row_(row),
          column_(column) {}

    [[nodiscard]] std::size_t row() const noexcept { return row_; }
    [[nodiscard]] std::size_t column() const noexcept { return column_; }

private:
    std::size_t row_;
    std::size_t column_;
};

class EmptyDataset : public ConfigError {
public:
    using ConfigError::ConfigError;
};

class ZeroNormRow : public ConfigError {
public:
    using ConfigError::ConfigError;
};

}  // namespace ntklab
