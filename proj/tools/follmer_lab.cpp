#include "follmer_lab/cli.hpp"

int main(int argc, char** argv) { return flab::cli::run(argc, argv); }
