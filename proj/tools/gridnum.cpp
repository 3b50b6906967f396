#include <iostream>

#include "gridnum/cli.hpp"

int main(int argc, char** argv) { return gridnum::run_cli(argc, argv, std::cout, std::cerr); }
