#include <iostream>
#include <string>
#include <vector>

#include "actdiff_app/app.hpp"

int main(int argc, char** argv) {
  return actdiff::app::run_command(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
