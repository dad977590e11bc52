#pragma once

#include <stdexcept>
#include <string>

namespace citsim {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed input document or record.
class ParseError : public Error {
public:
  using Error::Error;
};

/// Well-formed input that violates a domain invariant.
class ValidationError : public Error {
public:
  using Error::Error;
};

/// Lookup of an id, preset or run that does not exist.
class NotFoundError : public Error {
public:
  using Error::Error;
};

/// Operation not allowed in the current lifecycle state.
class StateError : public Error {
public:
  using Error::Error;
};

}  // namespace citsim
