#include "glyrl/pipeline.hpp"

int main(int argc, char** argv) { return glyrl::pipeline::run_cli(argc, argv); }
