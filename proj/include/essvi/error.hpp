#pragma once

#include <stdexcept>
#include <string>

namespace essvi {

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Malformed input file or row. Carries the 1-based line number when known.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line = 0)
        : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
          line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Structurally valid input that violates a schema rule (ordering, references).
class SchemaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Slices that do not map back into the open box of global parameters.
class InversionError : public std::runtime_error {
public:
    InversionError(const std::string& what, std::size_t slice, std::string coordinate)
        : std::runtime_error(what), slice_(slice), coordinate_(std::move(coordinate)) {}

    std::size_t slice() const noexcept { return slice_; }
    const std::string& coordinate() const noexcept { return coordinate_; }

private:
    std::size_t slice_;
    std::string coordinate_;
};

class CalibrationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File missing or unreadable. The message names the path.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace essvi
