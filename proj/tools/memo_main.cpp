#include "memo/cli.hpp"

int main(int argc, char** argv) { return memo::dispatch(argc, argv); }
