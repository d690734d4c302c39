#include "ttso/cli.hpp"

int main(int argc, char** argv) { return ttso::run_command(argc, argv); }
