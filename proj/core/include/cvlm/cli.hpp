// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace cvlm {

// Subcommand dispatcher behind the cvlm binary. Exit codes: 0 success,
// 1 usage error (with usage text), 2 runtime failure (with diagnostic).
int cli_main(int argc, const char* const* argv);

}  // namespace cvlm
