#include "stamp/cli/cli.hpp"

#include <iostream>

int main(int argc, char** argv)
{
    return stamp::cli::run_synth(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
