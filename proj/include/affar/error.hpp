#pragma once

#include <stdexcept>
#include <string>

namespace affar {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raw dataset could not be read or parsed.
class IngestError : public Error {
 public:
  using Error::Error;
};

// Tensor shapes disagree with what a layer or loss expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Saved artifact does not match the configuration it is loaded against.
class ConfigMismatchError : public Error {
 public:
  using Error::Error;
};

class CorruptFileError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite value.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace affar
