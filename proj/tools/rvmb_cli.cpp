// SPDX-License-Identifier: Apache-2.0
#include "rvmb/cli.hpp"

int main(int argc, char** argv) { return rvmb::run_cli(argc, argv); }
