#pragma once

#include <iosfwd>
#include <span>
#include <string>

namespace safesteer {

inline constexpr const char* kToolVersion = "0.1.0";
// Default output directory when --out-dir is not given.
inline constexpr const char* kOutDirEnv = "SAFESTEER_OUT_DIR";

// Runs the command line (args excludes the program name) and returns the
// process exit code: 0 ok, 2 usage, 3 data validation, 4 replay divergence,
// 5 numeric failure.
int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace safesteer
