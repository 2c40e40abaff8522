#include <etm/cli.hpp>

int main(int argc, char** argv) { return etm::run_command(argc, argv); }
