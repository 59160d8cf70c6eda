#pragma once

#include <stdexcept>
#include <string>

namespace iopfl {

// Error categories map one-to-one onto C API status codes and CLI exit codes.
enum class ErrorKind {
  kConfig,    // invalid configuration or arguments
  kShape,     // tensor/architecture mismatch
  kNumeric,   // non-finite values, divergence
  kIo,        // missing/corrupt files
  kState,     // misuse: stale tape, empty inputs
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace iopfl
