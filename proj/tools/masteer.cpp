#include <string>
#include <vector>

#include "masteer/cli.hpp"

int main(int argc, char** argv) {
  return masteer::cli::dispatch(std::vector<std::string>(argv + 1, argv + argc));
}
