#include "pcdiff/cli.hpp"

int main(int argc, char** argv) { return pcdiff::cli::run(argc, argv); }
