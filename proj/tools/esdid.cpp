// Command-line front end: esdid data.csv --effects 3 --placebos 2 [options]

#include <iostream>

#include "esdid/cli.hpp"

int main(int argc, char** argv) { return esdid::cli::run(argc, argv, std::cout, std::cerr); }
