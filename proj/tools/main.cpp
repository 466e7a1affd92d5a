#include "protolearn/cli.hpp"

int main(int argc, char** argv) {
  return protolearn::cli::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
