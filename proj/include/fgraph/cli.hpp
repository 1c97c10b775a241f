#pragma once

namespace fgraph::cli {

// Parses argv and runs one subcommand. Exit codes: 0 success, 1 usage,
// 2 invalid data or failed check, 3 internal error.
int run(int argc, char** argv);

}  // namespace fgraph::cli
