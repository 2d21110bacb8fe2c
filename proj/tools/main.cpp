#include "commands.hpp"

int main(int argc, char** argv) { return bforge::cli::run(argc, argv); }
