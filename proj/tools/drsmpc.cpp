#include <string>
#include <vector>

#include "drsmpc/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return drsmpc::cli::run_command(args);
}
