#pragma once

#include <iosfwd>

namespace gridnum {

/// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitNotConverged = 2;
inline constexpr int kExitUsage = 64;

/// Entry point of the `gridnum` tool: subcommands run, compare and gen.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace gridnum
