// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#include "layerdiff/faults.hpp"

#include <atomic>

#include "layerdiff/error.hpp"

namespace layerdiff {

namespace {
std::atomic<Fault> g_fault{Fault::none};
}

Fault parse_fault(const std::string& text) {
    if (text == "none") return Fault::none;
    if (text == "nonzero-sma-init") return Fault::nonzero_sma_init;
    if (text == "broken-clamp") return Fault::broken_clamp;
    throw ConfigError("unknown fault '" + text + "' (expected none, nonzero-sma-init or broken-clamp)");
}

std::string to_string(Fault fault) {
    switch (fault) {
        case Fault::none: return "none";
        case Fault::nonzero_sma_init: return "nonzero-sma-init";
        case Fault::broken_clamp: return "broken-clamp";
    }
    return "?";
}

void inject_fault(Fault fault) noexcept { g_fault.store(fault); }
Fault active_fault() noexcept { return g_fault.load(); }

}  // namespace layerdiff
