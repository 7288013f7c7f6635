#include <iostream>

#include "chaosemu/cli.hpp"

int main(int argc, char** argv) { return chaosemu::cli::run(argc, argv, std::cout, std::cerr); }
