#include "qkdsim/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return qkdsim::cli::run_cli(argc, argv, std::cout, std::cerr); }
