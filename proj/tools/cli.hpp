#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace dimwm {

/// Runs the command line `args` (without the program name) and returns the
/// process exit status: 0 ok, 1 runtime failure, 2 usage or config error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dimwm
