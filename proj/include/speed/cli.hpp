#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace speed::cli {

/// Process exit codes.
enum ExitCode : int {
  kOk = 0,             // success, or equivalence PASS
  kEquivalenceFail = 1,
  kUsageError = 2,
  kIoError = 3,
  kInternalError = 4,  // pipeline invariant violated
};

/// Runs the command line `args` (without the program name). Normal output
/// goes to `out`; a single "error code=<n> kind=<k> message=<m>" line goes to
/// `err` on failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace speed::cli
