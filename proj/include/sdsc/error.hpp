#pragma once

#include <stdexcept>
#include <string>

namespace sdsc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents that do not fit an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid run or compression configuration. The CLI maps this to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A non-finite loss term during training. The CLI maps this to exit code 3.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Malformed file on disk. `kind` distinguishes the failure so callers and
// tests can tell a bad magic from a truncated payload.
class FormatError : public Error {
 public:
  enum class Kind {
    kWrongMagic,
    kVersionMismatch,
    kCountMismatch,
    kShapeMismatch,
    kTruncated,
    kMalformed,
  };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace sdsc
