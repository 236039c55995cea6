#include <iostream>

#include "trajdiff/cli/commands.hpp"

int main(int argc, char** argv) { return trajdiff::cli::run(argc, argv, std::cout, std::cerr); }
