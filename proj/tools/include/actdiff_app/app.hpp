#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace actdiff::app {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kDataError = 3, kNumericError = 4 };

/// Parses `args` (without the program name) and runs the subcommand.
/// Progress goes to `out`; failures print a single line to `err`.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace actdiff::app
