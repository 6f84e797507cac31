#include "reasonact/cli.hpp"

int main(int argc, char** argv) { return reasonact::run_cli(argc, argv); }
