#include "widthred/cli.hpp"

int main(int argc, char** argv) { return widthred::run_cli(argc, argv); }
