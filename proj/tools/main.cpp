#include <iostream>
#include <string>
#include <vector>

#include "cgl/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cgl::cli::run(args, std::cout, std::cerr);
}
