#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace qnsim {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or missing input file. Carries the 1-based line number when known (0 otherwise).
class ParseError : public Error {
public:
    ParseError(const std::string& file, std::size_t line, const std::string& what)
        : Error(file + (line ? ":" + std::to_string(line) : std::string()) + ": " + what),
          file_(file), line_(line) {}

    const std::string& file() const noexcept { return file_; }
    std::size_t line() const noexcept { return line_; }

private:
    std::string file_;
    std::size_t line_;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

/// Pivot failure while factoring a matrix expected to be SPD.
class FactorizationError : public Error {
public:
    using Error::Error;
};

/// Input outside the domain of a material or geometric operation (NaN, zero-length edge, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Invalid mesh, material parameters or scenario configuration.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Backtracking line search shrank the step below its floor.
class StagnationError : public Error {
public:
    using Error::Error;
};

/// Simulation produced non-finite or runaway state.
class DivergenceError : public Error {
public:
    using Error::Error;
};

/// Rethrows the exception being handled with `prefix` prepended, keeping its type.
[[noreturn]] inline void rethrow_with_context(const std::string& prefix) {
    try {
        throw;
    } catch (const ParseError&) {
        throw;
    } catch (const DimensionError& e) {
        throw DimensionError(prefix + e.what());
    } catch (const FactorizationError& e) {
        throw FactorizationError(prefix + e.what());
    } catch (const DomainError& e) {
        throw DomainError(prefix + e.what());
    } catch (const ValidationError& e) {
        throw ValidationError(prefix + e.what());
    } catch (const StagnationError& e) {
        throw StagnationError(prefix + e.what());
    } catch (const DivergenceError& e) {
        throw DivergenceError(prefix + e.what());
    } catch (const Error& e) {
        throw Error(prefix + e.what());
    }
}

} // namespace qnsim
