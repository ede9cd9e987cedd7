#pragma once

#include <stdexcept>
#include <string>

namespace memorag {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A precondition of an operation was not met by the caller.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated file, bad magic, unsupported version.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Artifacts produced by different parameters or contexts were combined.
class CompatibilityError : public Error {
 public:
  using Error::Error;
};

// Input exceeds a fixed capacity such as the model's max_seq.
class CapacityError : public Error {
 public:
  using Error::Error;
};

// Invalid user input (bad value, unknown token, missing file).
class InputError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered during training or evaluation.
class NumericError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

}  // namespace detail
}  // namespace memorag
