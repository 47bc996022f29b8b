#include "blindspot/cli.hpp"

int main(int argc, char** argv) { return blindspot::run_cli(argc, argv); }
