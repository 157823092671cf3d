#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ham::cli {

enum ExitCode { kOk = 0, kInputError = 1, kVerificationFailure = 2 };

/// Run the command line `args` (without the program name). Output that would
/// go to stdout/stderr is written to `out`/`err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ham::cli
