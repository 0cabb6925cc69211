#include <iostream>

#include "pmt2i/cli.hpp"

int main(int argc, char** argv) {
  return pmt2i::cli::run_cli(argc, argv, std::cout, std::cerr);
}
