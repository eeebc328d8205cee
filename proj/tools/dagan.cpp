#include "dagan/pipeline.hpp"

int main(int argc, char** argv) { return dagan::cli_main(argc, argv); }
