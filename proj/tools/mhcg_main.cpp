// Command line entry point; all logic lives in the runner library.
#include <string>
#include <vector>

#include "mhcg/runner.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return mhcg::runner::cli_main(std::move(args));
}
