#include "safesteer/error.hpp"

namespace safesteer {

int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Usage:
    case ErrorKind::Unsupported:
      return 2;
    case ErrorKind::Validation:
    case ErrorKind::Dimension:
    case ErrorKind::Io:
      return 3;
    case ErrorKind::ReplayDivergence:
      return 4;
    case ErrorKind::Numeric:
      return 5;
  }
  return 1;
}

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Usage: return "usage";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Dimension: return "dimension-mismatch";
    case ErrorKind::Io: return "io";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::ReplayDivergence: return "replay-divergence";
    case ErrorKind::Unsupported: return "unsupported";
  }
  return "unknown";
}

}  // namespace safesteer
