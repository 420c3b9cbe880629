#include "harness.hpp"

int main(int argc, char** argv) { return hvlab::cli::cli_main(argc, argv); }
