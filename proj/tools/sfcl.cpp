#include <iostream>
#include <string>
#include <vector>

#include "sfcl/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return sfcl::cli::dispatch(args, std::cout, std::cerr);
}
