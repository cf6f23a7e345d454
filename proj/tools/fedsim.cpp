#include <iostream>
#include <string>
#include <vector>

#include "fedsim/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  return fedsim::cli_main(args, std::cout, std::cerr);
}
