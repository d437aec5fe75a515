#include <iostream>
#include <string>
#include <vector>

#include "transrank/cli/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  return transrank::cli::run(args, std::cout, std::cerr);
}
