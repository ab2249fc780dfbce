#pragma once

#include <ostream>

namespace mdet::cli {

enum ExitCode : int {
  kOk = 0,
  kGradcheckFailed = 1,
  kUsage = 2,
  kInvalidInput = 3,  // configuration violation or malformed input file
  kNumerical = 4,
  kRuntime = 5,  // I/O failure or other unexpected error
};

// Runs one subcommand. Normal output goes to `out`, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mdet::cli
