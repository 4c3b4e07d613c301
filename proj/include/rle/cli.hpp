#pragma once

#include <iosfwd>

namespace rle {

/// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;      // a self-check failed
inline constexpr int kExitUsage = 2;        // bad flags, config or input files
inline constexpr int kExitDivergence = 3;   // training produced non-finite values

/// Entry point of the `rle` tool: gen-data, train, bench, density, check.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace rle
