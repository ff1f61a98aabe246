#include <iostream>

#include "ode/cli.hpp"

int main(int argc, char** argv) { return ode::run_cli(argc, argv, std::cout, std::cerr); }
