#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace stylesketch::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitIoConfig = 2;

// Runs one subcommand. args excludes the program name. Failures print a single
// JSON object {"error": kind, "message": ..., "exit": code} on err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace stylesketch::cli
