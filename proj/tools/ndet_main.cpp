#include "ndet/commands.hpp"

int main(int argc, char** argv) { return ndet::run_cli(argc, argv); }
