#pragma once

#include <stdexcept>
#include <string>

namespace mdet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or count mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value. `key()` names the offending setting when known.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what, std::string key = {})
      : Error(what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

// API misuse, e.g. differentiating a variable that belongs to another tape.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Non-finite value produced during evaluation or training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mdet
