// Copyright 2026 The Sandglasset Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <iostream>

#include "sandglasset/cli.hpp"

int main(int argc, char** argv) {
  return sandglasset::cli::run(argc, argv, {std::cout, std::cerr});
}
