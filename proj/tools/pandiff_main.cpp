#include <iostream>

#include "pandiff/cli.hpp"

int main(int argc, char** argv) { return pandiff::run_cli(argc, argv, std::cout, std::cerr); }
