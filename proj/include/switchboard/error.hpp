#pragma once

#include <stdexcept>
#include <string>

namespace switchboard {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed on-disk input: weights container, vocab, capture store, profile.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Caller passed arguments that violate an operation's preconditions.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace switchboard
