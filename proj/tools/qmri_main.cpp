#include "qmri/cli.hpp"

int main(int argc, char** argv) { return qmri::run_cli(argc, argv); }
