#include "hfnc/cli.hpp"

int main(int argc, char** argv) { return hfnc::cli::run(argc, argv); }
