#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace objdino {

// Exit codes: 0 success, 1 runtime/data error, 2 usage error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Entry point of the `objdino` tool. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace objdino
