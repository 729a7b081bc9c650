// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>

namespace layerdiff {

enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 1,         // bad arguments or config
    kExitData = 2,          // unreadable or inconsistent inputs, I/O failures
    kExitVerification = 3,  // selfcheck found a defect
};

/// Entry point of the layerdiff command. Log records go to `out` as one
/// JSON object per line; diagnostics go to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace layerdiff
