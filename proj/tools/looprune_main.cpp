#include <iostream>

#include "looprune/commands.hpp"

int main(int argc, char** argv) {
  std::ios::sync_with_stdio(false);
  return looprune::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
