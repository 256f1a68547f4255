#include <iostream>
#include <string>
#include <vector>

#include "scolio/cli.hpp"
#include "scolio/train.hpp"

int main(int argc, char** argv) {
  scolio::tune_allocator();
  std::vector<std::string> args(argv + 1, argv + argc);
  return scolio::run_cli(args, std::cout, std::cerr);
}
