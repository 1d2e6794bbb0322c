#include <iostream>
#include <string>
#include <vector>

#include "stsae/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return stsae::cli::run(args, std::cout, std::cerr);
}
