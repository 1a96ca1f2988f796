#include <string>
#include <vector>

#include "cglp/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return cglp::cli::run(args).exit_code;
}
