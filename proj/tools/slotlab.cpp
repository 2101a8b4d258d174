#include <iostream>

#include "slotlab/cli.hpp"

int main(int argc, char** argv) {
    return slotlab::cli_main(argc, argv, std::cout, std::cerr);
}
