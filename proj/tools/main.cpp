#include <vector>

#include "sfnmt/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return sfnmt::cli::dispatch(std::move(args));
}
