#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace safe {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when operand shapes do not conform. Carries the op name and the
/// offending shapes so callers can report them.
class ShapeError : public Error {
public:
    ShapeError(std::string op, std::vector<std::vector<std::ptrdiff_t>> shapes, const std::string& what);

    const std::string& op() const noexcept { return op_; }
    const std::vector<std::vector<std::ptrdiff_t>>& shapes() const noexcept { return shapes_; }

private:
    std::string op_;
    std::vector<std::vector<std::ptrdiff_t>> shapes_;
};

/// Raised when a normalization layer sees fewer than two samples.
class BatchSizeError : public Error {
public:
    using Error::Error;
};

/// Raised when training produces NaN or Inf.
class NonFiniteError : public Error {
public:
    using Error::Error;
};

/// Raised on payload / checkpoint structure problems, including the privacy
/// invariant (normalization parameters inside a federation payload).
class PayloadError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace safe
