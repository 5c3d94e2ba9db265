#include "budis/cli.hpp"

int main(int argc, char** argv) { return budis::cli::run(argc, argv); }
