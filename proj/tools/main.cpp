// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "layerdiff/cli.hpp"

int main(int argc, char** argv) { return layerdiff::run_cli(argc, argv, std::cout, std::cerr); }
