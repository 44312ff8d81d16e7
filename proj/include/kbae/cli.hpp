#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace kbae {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2 };

// Runs one subcommand. `args` excludes the program name. Diagnostics are a
// single line on `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace kbae
