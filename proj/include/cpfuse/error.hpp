#pragma once

#include <stdexcept>
#include <string>

namespace cpfuse {

/// Base class for failures caused by bad input data or a violated contract.
/// The CLI maps these to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition of an operation does not hold (length mismatch, bad id, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Reading or writing a file or stream failed.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A serialized artifact or wire message is malformed.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A remote backend did not answer within its deadline.
class TimeoutError : public Error {
 public:
  using Error::Error;
};

}  // namespace cpfuse
