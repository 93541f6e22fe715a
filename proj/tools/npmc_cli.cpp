#include <iostream>

#include "npmc/cli.hpp"

int main(int argc, char** argv)
{
    return npmc::cli::main(argc, argv, std::cout, std::cerr);
}
