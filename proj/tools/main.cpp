#include "fusedet/cli.hpp"

int main(int argc, char** argv) { return fusedet::cli::run(argc, argv); }
