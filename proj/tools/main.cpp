#include <iostream>

#include "mtm/cli/commands.hpp"

int main(int argc, char** argv) { return mtm::cli::run(argc, argv, std::cout, std::cerr); }
