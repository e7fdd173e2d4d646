#pragma once

#include <stdexcept>
#include <string>

namespace hutamp {

// Base for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or non-finite input data, bad file contents.
class InputError : public Error {
 public:
  using Error::Error;
};

// A parameter outside its valid domain.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced during iteration.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Initialization failed; the message names the step.
class InitError : public Error {
 public:
  using Error::Error;
};

// Shape or dimension mismatch between related arrays.
class ShapeError : public Error {
 public:
  using Error::Error;
};

}  // namespace hutamp
