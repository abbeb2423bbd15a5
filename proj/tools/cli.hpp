#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace fieldqc::cli {

enum ExitCode : int {
  kStationary = 0,
  kFailure = 1,
  kUsage = 2,
  kParse = 3,
  kFit = 4,
  kConfig = 5,
  kFlagged = 10,
  kSimulation = 20,
  kMissingSidecar = 21,
};

/// Runs one command line (`args[0]` is the program name) and returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fieldqc::cli
