#include "commands.hpp"

int main(int argc, char** argv) { return mmreg::cli::run(argc, argv); }
