#include <iostream>

#include "rle/cli.hpp"

int main(int argc, char** argv) { return rle::run_cli(argc, argv, std::cout, std::cerr); }
