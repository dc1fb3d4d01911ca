#pragma once

#include <iostream>

namespace bat {

// Parses and runs one batcli invocation (argv[0] is the program name).
// Returns the process exit code: 0 success, 1 runtime failure (bad file,
// inconsistent data), 2 flag errors. Never throws; messages go to the given
// streams so tests can drive commands in-process.
int run_command(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_command(int argc, const char* const* argv);

}  // namespace bat
