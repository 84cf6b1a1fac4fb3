#include <iostream>

#include "deal/service/cli.hpp"

int main(int argc, char** argv) { return deal::service::cli_main(argc, argv, std::cout, std::cerr); }
