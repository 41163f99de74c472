#include "commands.hpp"

int main(int argc, char** argv) { return maskfocus::cli::run(argc, argv); }
