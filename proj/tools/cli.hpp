// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mosa::cli {

/// Runs `mosa <args...>` (args exclude the program name) and returns the
/// process exit code: 0 ok, 2 config, 3 data/IO, 4 numeric, 5 internal.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mosa::cli
