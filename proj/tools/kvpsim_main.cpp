#include <iostream>
#include <string>
#include <vector>

#include "kvpsim/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return kvpsim::cli::main(args, std::cout, std::cerr);
}
