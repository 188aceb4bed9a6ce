#include <iostream>

#include "htp/cli.hpp"

int main(int argc, char** argv) { return htp::run_cli(argc, argv, std::cout, std::cerr); }
