#include <vector>

#include "lsens/cli.hpp"
#include "lsens/common.hpp"

int main(int argc, char** argv) {
    lsens::tune_allocator();
    return lsens::cli_main(std::vector<std::string>(argv + 1, argv + argc));
}
