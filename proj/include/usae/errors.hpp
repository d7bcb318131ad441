#pragma once

#include <stdexcept>
#include <string>

namespace usae {

// Base of every error raised by the library. The CLI maps the subclasses
// onto exit codes: UsageError/ParameterError -> 1, the rest -> 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Operand shapes do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

// A scalar argument is outside its documented domain (k > m, batch too large, ...).
class ParameterError : public Error {
public:
    using Error::Error;
};

// Input values are malformed: NaN/Inf, index out of range, empty dataset.
class DataError : public Error {
public:
    using Error::Error;
};

// Binary file does not follow the on-disk layout. Carries the byte offset.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

// Statistic is undefined for this input (zero variance, zero-norm row, ...).
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

// Caller broke an API contract, e.g. a backward pass fed a stale cache.
class ContractError : public Error {
public:
    using Error::Error;
};

// Optimization produced a non-finite objective.
class DivergenceError : public Error {
public:
    using Error::Error;
};

// Filesystem failure; message names the path.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace usae
