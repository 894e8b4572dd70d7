#include "psal/cli.hpp"

int main(int argc, char** argv) { return psal::cli::run(argc, argv); }
