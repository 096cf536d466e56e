#include <iostream>
#include <string>
#include <vector>

#include "chordfit/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return chordfit::cli::run_main(args, std::cout, std::cerr);
}
