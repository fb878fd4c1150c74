#pragma once

#include <stdexcept>
#include <string>

namespace cresnet {

// Error taxonomy, kept flat on purpose; the CLI maps these to exit codes
// (SpecError/usage -> 2, DataError -> 3, anything else -> 1).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape algebra violations. Messages name the op and the offending axes.
struct ShapeError : Error {
  using Error::Error;
};

// Autodiff misuse: backward on a detached tensor, non-scalar root, ...
struct GraphError : Error {
  using Error::Error;
};

// Architecture spec violations (illegal jumper, bad mask, unknown name).
struct SpecError : Error {
  using Error::Error;
};

// Malformed dataset / checkpoint / spec-file bytes. Carries a byte offset
// when one is known.
struct DataError : Error {
  explicit DataError(const std::string& msg, long long offset = -1)
      : Error(offset >= 0 ? msg + " (at byte offset " + std::to_string(offset) + ")" : msg),
        byte_offset(offset) {}
  long long byte_offset = -1;
};

}  // namespace cresnet
