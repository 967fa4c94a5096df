#include <iostream>
#include <string>
#include <vector>

#include "slicetwin/pipeline.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return slicetwin::run_cli(args, std::cout, std::cerr);
}
