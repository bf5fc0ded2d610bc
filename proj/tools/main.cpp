#include <taflab/cli.hpp>

int main(int argc, char** argv) { return taflab::run_cli(argc, argv); }
