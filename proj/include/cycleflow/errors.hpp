#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace cycleflow {

/// Base class for everything thrown by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class NotConnected : public Error {
 public:
  using Error::Error;
};

class InvalidTree : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class UnbalancedInjection : public Error {
 public:
  using Error::Error;
};

class MissingElementaryColumn : public Error {
 public:
  using Error::Error;
};

/// Thrown when an operation requires certified inputs (a verified basis, a
/// particular solution that satisfies conservation) and the check fails.
class UncertifiedInputs : public Error {
 public:
  using Error::Error;
};

class HorizonMismatch : public Error {
 public:
  using Error::Error;
};

class LocalInfeasible : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Input validation failure; carries the offending field for CLI reporting.
class ValidationError : public Error {
 public:
  ValidationError(std::string field, std::string reason)
      : Error(field + ": " + reason),
        field_(std::move(field)),
        reason_(std::move(reason)) {}

  const std::string& field() const { return field_; }
  const std::string& reason() const { return reason_; }

 private:
  std::string field_;
  std::string reason_;
};

}  // namespace cycleflow
