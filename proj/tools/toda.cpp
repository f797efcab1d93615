#include "supertoda/pipeline.hpp"

int main(int argc, char** argv) { return supertoda::pipeline::run_cli(argc, argv); }
