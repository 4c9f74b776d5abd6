#pragma once

#include <stdexcept>
#include <string>

namespace pcgan {

/// Root of every exception raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents that do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Input violates a documented precondition (e.g. batch too small for batchnorm).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// API misuse: wrong call order, missing gradients, out-of-range labels.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed layer specification list.
class SpecError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values encountered while finite-value checking is enabled.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Parameter copy between networks failed (shape mismatch on a shared name).
class TransferError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Binary container problems. `kind()` distinguishes the failure.
class FormatError : public Error {
 public:
  enum class Kind { bad_magic, truncated, count_mismatch, version_mismatch, unknown_tensor, malformed };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace pcgan
