#pragma once

#include <stdexcept>
#include <string>

namespace claimlab {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller supplied input that violates a documented precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

// A quantity is mathematically undefined for the given input (0/0 and friends).
class DomainError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Remote provider unreachable, timed out, or returned a non-2xx status.
class TransportError : public Error {
 public:
  using Error::Error;
};

// A model reply could not be turned into a structured answer.
class ReplyParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace claimlab
