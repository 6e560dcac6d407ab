#include <iostream>
#include <string>
#include <vector>

#include "flowcausal/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return flowcausal::cli::run(args, std::cout, std::cerr);
}
