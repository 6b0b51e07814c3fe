#include "profuse/runner.hpp"

int main(int argc, char** argv) { return profuse::runner::run_cli(argc, argv); }
