#pragma once

#include <stdexcept>
#include <string>

namespace pcdiff {

/// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad shapes, out-of-range parameters, unknown config keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or wrong-length FuserKey.
class KeyError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ResourceError : public Error {
 public:
  using Error::Error;
};

/// Watermark payload does not fit in the latent.
class CapacityError : public Error {
 public:
  using Error::Error;
};

class DecodeError : public Error {
 public:
  using Error::Error;
};

}  // namespace pcdiff
