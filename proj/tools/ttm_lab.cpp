#include "ttm/cli.hpp"

int main(int argc, char** argv) { return ttm::cli::run(argc, argv); }
