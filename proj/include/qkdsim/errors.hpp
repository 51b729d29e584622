#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace qkdsim {

/// Argument outside the mathematical domain of an operation.
struct DomainError : std::domain_error
{
    using std::domain_error::domain_error;
};

/// An event scheduled before the current simulated clock.
struct CausalityError : std::logic_error
{
    using std::logic_error::logic_error;
};

/// Invalid or inconsistent configuration (unknown link, bad parameter, ...).
struct ConfigError : std::invalid_argument
{
    ConfigError(std::string field, const std::string& what)
        : std::invalid_argument(field.empty() ? what : field + ": " + what), field_(std::move(field))
    {
    }
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// A rate-normalized quantity was requested with a zero denominator.
struct UndefinedRateError : std::domain_error
{
    using std::domain_error::domain_error;
};

/// Not enough data to produce a statistically meaningful estimate.
struct InsufficientStatistics : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

/// Malformed input file.
struct DataFormatError : std::runtime_error
{
    DataFormatError(std::size_t line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line)
    {
    }
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

} // namespace qkdsim
