#include <iostream>

#include "cli_app.hpp"

int main(int argc, char** argv) {
  return spose::cli::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
