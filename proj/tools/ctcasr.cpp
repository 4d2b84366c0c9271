#include "ctcasr/cli.hpp"

int main(int argc, char** argv) { return ctcasr::run_cli(argc, argv); }
