#pragma once

// Command-line front end. run() parses argv-style arguments (without the
// program name), executes one subcommand and returns its exit code:
//   0 success, 2 configuration / schema / usage, 3 I/O, 4 numeric failure.
// Commands write their outputs plus one <primary output>.manifest.json.

#include <iosfwd>
#include <string>
#include <vector>

namespace flowcausal::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitNumeric = 4;
inline constexpr int kExitInternal = 1;

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Hex SHA-256 of a file's bytes.
std::string file_digest(const std::string& path);

}  // namespace flowcausal::cli
