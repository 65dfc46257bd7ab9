#include <iostream>

#include "adaptagent/cli.hpp"

int main(int argc, char** argv) { return adaptagent::cli::run(argc, argv, std::cout, std::cerr); }
