#pragma once

#include <stdexcept>
#include <string>

namespace m3dm {

/// Base class for every error raised by the library. The CLI maps `kind()` to
/// the first token of its single-line error message.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

/// A caller broke a documented precondition (dimension mismatch, bad config).
class ContractError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "contract"; }
};

/// A numerical procedure could not produce a finite / well-posed result.
class NumericalError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "numerical"; }
};

class DataError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "data"; }
};

class VersionMismatchError : public DataError {
 public:
  using DataError::DataError;
  const char* kind() const noexcept override { return "version"; }
};

class TruncatedFileError : public DataError {
 public:
  using DataError::DataError;
  const char* kind() const noexcept override { return "truncated"; }
};

class ManifestMismatchError : public DataError {
 public:
  using DataError::DataError;
  const char* kind() const noexcept override { return "manifest"; }
};

}  // namespace m3dm
