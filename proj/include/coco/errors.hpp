#pragma once

#include <stdexcept>
#include <string>

namespace coco {

// Every failure raised by the library derives from Error. The CLI maps the
// category onto its exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Bad model input: token id out of vocab, sequence too long, mismatched configs.
class InputError : public Error {
 public:
  using Error::Error;
};

class AddressError : public Error {
 public:
  using Error::Error;
};

// Malformed files. `offset` is the byte (or line, for JSON Lines) where parsing
// failed, or -1 when unknown.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, long long offset = -1)
      : Error(offset >= 0 ? what + " (at offset " + std::to_string(offset) + ")" : what),
        offset_(offset) {}
  long long offset() const { return offset_; }

 private:
  long long offset_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class StalenessError : public Error {
 public:
  using Error::Error;
};

class PlanError : public Error {
 public:
  using Error::Error;
};

class EmptySelectionError : public Error {
 public:
  using Error::Error;
};

class PartitionError : public Error {
 public:
  using Error::Error;
};

}  // namespace coco
