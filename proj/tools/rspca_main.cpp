#include "rspca/cli.hpp"

int main(int argc, char** argv) { return rspca::cli::run(argc, argv); }
