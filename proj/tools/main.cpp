#include "ebmf/cli.hpp"

int main(int argc, char** argv) { return ebmf::cli_main(argc, argv); }
