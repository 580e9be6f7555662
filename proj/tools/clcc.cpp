#include "clcc/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return clcc::run_cli(argc, argv, std::cout, std::cerr); }
