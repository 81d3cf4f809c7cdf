#include "cli.hpp"

int main(int argc, char** argv) { return hmd::cli::run(argc, argv); }
