#include <iostream>

#include "citegraph/cli.hpp"

int main(int argc, char** argv) { return citegraph::run_cli(argc, argv, std::cout, std::cerr); }
