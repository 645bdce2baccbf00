#include <string>
#include <vector>

#include "slitflow/cli.hpp"

int main(int argc, char** argv) {
  return slitflow::cli::dispatch(std::vector<std::string>(argv + 1, argv + argc));
}
