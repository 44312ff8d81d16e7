#include <iostream>
#include <string>
#include <vector>

#include "kbae/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return kbae::dispatch(args, std::cout, std::cerr);
}
