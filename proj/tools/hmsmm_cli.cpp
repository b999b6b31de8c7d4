#include "hmsmm/cli.hpp"

int main(int argc, char** argv) { return hmsmm::cli_main(argc, argv); }
