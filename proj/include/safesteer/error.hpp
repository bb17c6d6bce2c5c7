#pragma once

#include <stdexcept>
#include <string>

namespace safesteer {

enum class ErrorKind {
  Usage,             // bad flags or precondition violated by the caller
  Validation,        // malformed or invariant-violating data
  Dimension,         // vector/model dimensions disagree
  Io,                // file could not be opened or written
  Numeric,           // fit/training failure (rank deficiency, divergence)
  ReplayDivergence,  // replay backend was driven off the recorded path
  Unsupported,       // operation not offered by this backend
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// CLI exit code for an error class: 2 usage, 3 data validation,
// 4 replay divergence, 5 numeric failure.
int exit_code(ErrorKind kind) noexcept;

const char* to_string(ErrorKind kind) noexcept;

}  // namespace safesteer
