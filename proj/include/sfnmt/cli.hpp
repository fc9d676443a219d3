#pragma once

#include <string>
#include <vector>

namespace sfnmt::cli {

// Runs one toolkit subcommand. `args` excludes the program name.
// Exit codes: 0 success, 1 usage error, 2 data/runtime error.
int dispatch(std::vector<std::string> args);

}  // namespace sfnmt::cli
