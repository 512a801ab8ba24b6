#include "stwave/cli.hpp"

int main(int argc, char** argv) { return stwave::cli_main(argc, argv); }
