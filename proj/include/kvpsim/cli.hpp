#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace kvpsim::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitConfig = 2;

/// Entry point behind the `kvpsim` binary. `args` excludes the program name.
/// Subcommands: run, sweep, capacity, compare.
int main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace kvpsim::cli
