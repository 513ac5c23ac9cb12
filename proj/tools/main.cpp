#include "swintempo/cli.hpp"

int main(int argc, char** argv) { return swintempo::cli::run(argc, argv); }
