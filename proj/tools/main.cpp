#include "abtok/cli.hpp"

int main(int argc, char** argv) {
    return abtok::cli::run(argc, argv);
}
