#include "slmfuse/cli.hpp"

int main(int argc, char** argv) { return slmfuse::dispatch(argc, argv); }
