#pragma once

namespace mmreg::cli {

// Parses and dispatches the mmreg subcommands. Returns the process exit
// code: 0 success, 2 config error, 3 data error, 4 runtime/numeric failure.
int run(int argc, char** argv);

}  // namespace mmreg::cli
