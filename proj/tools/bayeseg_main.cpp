#include "bayeseg/cli.hpp"

int main(int argc, char** argv) { return bayeseg::cli_main(argc, argv); }
