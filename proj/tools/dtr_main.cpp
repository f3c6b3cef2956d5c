#include "dtr/cli.hpp"

int main(int argc, char** argv) { return dtr::run_cli(argc, argv); }
