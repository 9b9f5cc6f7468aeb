#include "cli/app.hpp"

int main(int argc, char** argv) { return s3ta::cli::run_main(argc, argv); }
