#include "qtm/experiment.hpp"

#include <iostream>

int main(int argc, char** argv) { return qtm::run_cli(argc, argv, std::cout, std::cerr); }
