// SPDX-License-Identifier: Apache-2.0
#include "atmv/cli.hpp"

int main(int argc, char** argv) { return atmv::run_cli(argc, argv); }
