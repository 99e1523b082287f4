// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace cmh {

// Every failure the harness raises derives from Error. The CLI maps the
// category onto its exit code (see exit_code()).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad flags, bad run configuration, missing template files.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Input data that does not satisfy a documented contract.
class ValidationError : public Error {
public:
    using Error::Error;
};

class ParseError : public ValidationError {
public:
    ParseError(const std::string& what, std::size_t line)
        : ValidationError("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

// A caller broke a precondition (mixed task ids, n < 1, ...).
class ContractError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class BudgetError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class FixtureError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// Anything outside the harness: runner process, HTTP backend, file system.
class InfrastructureError : public Error {
public:
    using Error::Error;
};

class TransportError : public InfrastructureError {
public:
    TransportError(const std::string& what, bool retryable)
        : InfrastructureError(what), retryable_(retryable) {}

    bool retryable() const noexcept { return retryable_; }

private:
    bool retryable_;
};

inline int exit_code(const Error& e) noexcept {
    if (dynamic_cast<const ConfigError*>(&e)) return 1;
    if (dynamic_cast<const ValidationError*>(&e)) return 2;
    return 3;
}

} // namespace cmh
