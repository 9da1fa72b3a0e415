// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace atr {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A documented precondition of an operation was not met by the caller.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Input data violates a domain invariant (bad box, duplicate id, ...).
class InvariantError : public Error {
 public:
  using Error::Error;
};

/// Text input could not be parsed. `line()` is 1-based, 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Backend could not be reached or timed out. Retryable.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// Backend answered, but the answer breaks the wire contract. Not retryable.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Invalid run configuration, detected before any work starts.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace atr
