#pragma once

#include <string>
#include <vector>

namespace profuse::runner {

/// Command-line entry point (subcommands: synth, train, cv, predict,
/// evaluate). Returns the process exit code: 0 success, 1 runtime failure,
/// 2 usage or configuration error.
int run_cli(int argc, const char* const* argv);

/// Same, for programmatic callers: `args` excludes the program name.
int run_cli(const std::vector<std::string>& args);

}  // namespace profuse::runner
