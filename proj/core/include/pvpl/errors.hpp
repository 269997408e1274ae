#pragma once

#include <stdexcept>
#include <string>

namespace pvpl {

/// Base for every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible with the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A scalar argument is outside its documented range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Cosine similarity or normalization of a zero-norm vector.
class DegenerateVectorError : public Error {
 public:
  using Error::Error;
};

/// Malformed input: token sequences, corpus records, config entries.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or parameter detected during training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// File I/O, checkpoint framing and checksum failures.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace pvpl
