// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace labelcon::cli {

enum ExitCode : int {
  kSuccess = 0,
  kFailure = 1,  // runtime failure, or a gradient check that did not pass
  kUsage = 2,    // bad flags, config, input files or shapes
  kNumerical = 3,
};

/// Runs one command line (args excludes the program name). Output goes to
/// `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace labelcon::cli
