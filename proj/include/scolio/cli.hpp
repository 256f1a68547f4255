#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace scolio {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `scolio` tool; `args` excludes the program name.
/// Subcommands: synth, train, eval, explain.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace scolio
