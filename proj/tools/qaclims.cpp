#include "qaclims/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return qaclims::cli_main(argc, argv, std::cout, std::cerr); }
