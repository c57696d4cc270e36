// SPDX-License-Identifier: Apache-2.0
#include "cvlm/cli.hpp"

int main(int argc, char** argv) { return cvlm::cli_main(argc, argv); }
