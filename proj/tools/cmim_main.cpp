#include <iostream>

#include "cmim/cli.hpp"

int main(int argc, char** argv) { return cmim::run_cli(argc, argv, std::cout, std::cerr); }
