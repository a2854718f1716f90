#include "cli.hpp"

int main(int argc, char** argv) { return dcspp::cli_main(argc, argv); }
