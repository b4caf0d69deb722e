#include <vector>

#include "mvar/cli.hpp"

int main(int argc, char** argv) {
    return mvar::cli::cli_main(std::vector<std::string>(argv + 1, argv + argc));
}
