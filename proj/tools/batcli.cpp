#include "bat/cli.hpp"

int main(int argc, char** argv) { return bat::run_command(argc, argv); }
