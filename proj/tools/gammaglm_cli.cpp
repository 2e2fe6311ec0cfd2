#include "gammaglm/cli.hpp"

int main(int argc, char** argv) { return gammaglm::cli::run(argc, argv); }
