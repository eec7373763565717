#include "cli.hpp"

int main(int argc, char** argv) {
    return tracemark::cli::run_cli(std::vector<std::string>(argv, argv + argc));
}
