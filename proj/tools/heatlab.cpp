#include "heatlab/cli.hpp"

int main(int argc, char** argv) { return heatlab::cli_main(argc, argv); }
