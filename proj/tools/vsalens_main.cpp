#include "cli.hpp"

int main(int argc, char** argv) { return vsalens::cli::run(argc, argv); }
