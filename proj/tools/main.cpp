#include "quadgfm/cli.hpp"

int main(int argc, char** argv) { return quadgfm::cli::run_command(argc, argv); }
