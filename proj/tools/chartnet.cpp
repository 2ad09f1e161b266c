#include <iostream>

#include "chartnet/cli.hpp"

int main(int argc, char** argv) { return chartnet::run_cli(argc, argv, std::cout, std::cerr); }
