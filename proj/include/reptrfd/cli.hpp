#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace reptrfd::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

/// Runs one subcommand; args excludes the program name.
int run(std::vector<std::string> args, std::ostream &out, std::ostream &err);

int main(int argc, char **argv);

} // namespace reptrfd::cli
