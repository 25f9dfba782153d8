#include "biolearn/cli.hpp"

int main(int argc, char** argv) { return biolearn::cli::run(argc, argv); }
