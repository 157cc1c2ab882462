#include "aps/cli.hpp"

int main(int argc, char** argv) { return aps::run_cli(argc, argv); }
