#include <string>
#include <vector>

#include "advscope/cli.hpp"

int main(int argc, char** argv) {
  return advscope::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
