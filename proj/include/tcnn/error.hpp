#pragma once

#include <stdexcept>
#include <string>

namespace tcnn {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
  using Error::Error;
};

/// Tensor or layer shapes that do not chain.
class ShapeError : public Error {
public:
  using Error::Error;
};

/// API called in the wrong order (e.g. backward before forward).
class UsageError : public Error {
public:
  using Error::Error;
};

/// Invalid graph construction, such as an output slice with no inputs.
class ConstructionError : public Error {
public:
  using Error::Error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

class NumericError : public Error {
public:
  using Error::Error;
};

/// Dataset / file-format failure. `kind()` distinguishes the cause.
class DataError : public Error {
public:
  enum class Kind { io, bad_magic, truncated, count_mismatch, format };

  DataError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

private:
  Kind kind_;
};

} // namespace tcnn
