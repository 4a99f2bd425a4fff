#include "mambavsr/cli.hpp"

int main(int argc, char** argv) { return mvsr::cli::main(argc, argv); }
