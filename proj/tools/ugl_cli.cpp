#include "ugl/cli.hpp"

int main(int argc, char** argv) { return ugl::cli::run(argc, argv); }
