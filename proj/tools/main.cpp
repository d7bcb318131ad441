#include "cli.hpp"

int main(int argc, char** argv) { return usae::run_cli(argc, argv); }
