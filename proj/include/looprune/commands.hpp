#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace looprune {

// Exit statuses of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitMalformedInput = 2;

// Runs one command line (args[0] is the program name). Results go to
// files or `out`; diagnostics go to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace looprune
