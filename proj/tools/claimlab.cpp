#include "claimlab/cli.hpp"

int main(int argc, char** argv) { return claimlab::run_cli(argc, argv); }
