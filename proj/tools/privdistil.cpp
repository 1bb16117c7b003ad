#include <iostream>

#include "privdistil/cli/commands.hpp"

int main(int argc, char** argv) { return privdistil::cli::run_cli(argc, argv, std::cout, std::cerr); }
