#pragma once

#include <iosfwd>

namespace cmim {

/// Exit codes: 0 success, 1 runtime failure, 2 invalid input (bad config,
/// missing file, mismatched class count, bad flags).
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitInvalid = 2;

/// Entry point of the `cmim` tool: subcommands train, distill, profile,
/// simplex.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cmim
