#include <iostream>
#include <string>
#include <vector>

#include "poserank/cli.hpp"

int main(int argc, char** argv) {
  return poserank::cli::run(std::vector<std::string>(argv + 1, argv + argc),
                            std::cout, std::cerr);
}
