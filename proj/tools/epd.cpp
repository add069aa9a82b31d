#include <iostream>

#include "epd/cli.hpp"

int main(int argc, char** argv) { return epd::cli::run(argc, argv, {std::cout, std::cerr}); }
