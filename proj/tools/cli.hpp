#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace clvit::cli {

// Dispatches one command line (without argv[0]). Returns the process exit
// code: 0 success, 1 runtime failure, 2 usage error.
int run(std::vector<std::string> args, std::ostream& out, std::ostream& err);

}  // namespace clvit::cli
