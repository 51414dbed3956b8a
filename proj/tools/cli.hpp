#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mass::cli {

/// Runs the command line `args` (program name first). Data goes to `out`,
/// logs and diagnostics to `err`. Returns the process exit status.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mass::cli
