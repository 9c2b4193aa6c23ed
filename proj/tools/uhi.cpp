#include <iostream>

#include "uhi/cli.hpp"

int main(int argc, char** argv) { return uhi::cli_dispatch(argc, argv, std::cout, std::cerr); }
