#include "cli.hpp"

int main(int argc, char** argv) { return codesfm::cli_main(argc, argv); }
