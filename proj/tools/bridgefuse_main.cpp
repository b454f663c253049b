#include <iostream>

#include "bridgefuse/cli.hpp"

int main(int argc, char** argv) { return bridgefuse::cli::Main(argc, argv, std::cout, std::cerr); }
