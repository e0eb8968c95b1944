#include "reptrfd/cli.hpp"

int main(int argc, char **argv) { return reptrfd::cli::main(argc, argv); }
