#pragma once

#include <stdexcept>
#include <string>

namespace ttm {

// Root of every exception the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Checkpoint I/O: bad magic or version.
class FormatError : public Error {
 public:
  using Error::Error;
};

class TruncatedError : public Error {
 public:
  using Error::Error;
};

// A stored tensor does not match the shape the configuration expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// GSoT: every token was filtered out before reasoning.
class EmptyPathError : public Error {
 public:
  using Error::Error;
};

}  // namespace ttm
