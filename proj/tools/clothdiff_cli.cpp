#include "clothdiff/cli/cli.hpp"

int main(int argc, char** argv) { return clothdiff::cli::run(argc, argv); }
