#include "dualswin/cli.hpp"

int main(int argc, char** argv) { return dualswin::cli::run(argc, argv); }
