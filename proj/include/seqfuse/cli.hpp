// SPDX-License-Identifier: Apache-2.0
//
// The `seqfuse` command: gen, train, eval and serve subcommands.
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace seqfuse {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitDivergence = 3;

/// Runs the command line `args` (without the program name). Every output
/// file is a pure function of the arguments and the input files.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace seqfuse
