#include <iostream>

#include "densedet/cli.hpp"

int main(int argc, char** argv) {
  return densedet::run_cli({argv, argv + argc}, std::cout, std::cerr);
}
