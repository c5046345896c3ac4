#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace falcon::cli {

enum ExitCode : int { kSuccess = 0, kUsageError = 1, kRuntimeError = 2 };

// Runs the `falcon` command line; argv[0] is the program name.
int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

}  // namespace falcon::cli
