#include <iostream>
#include <string>
#include <vector>

#include "synthfed/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  return synthfed::cli_dispatch(args, std::cout, std::cerr);
}
