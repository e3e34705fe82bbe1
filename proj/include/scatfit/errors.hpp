#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace scatfit {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precondition or domain violation detected when building or mutating objects.
class ValueError : public Error {
 public:
  using Error::Error;
};

// Raised while evaluating a functor (unbound variable, invalid width, ...).
class EvalError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class FitError : public Error {
 public:
  using Error::Error;
};

// Model-file schema problems; the message names the offending field.
class SchemaError : public Error {
 public:
  using Error::Error;
};

}  // namespace scatfit
