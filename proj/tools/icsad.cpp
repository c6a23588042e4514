#include "icsad/cli.hpp"

int main(int argc, char** argv) { return icsad::run_cli(argc, argv); }
