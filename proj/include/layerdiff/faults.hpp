// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

namespace layerdiff {

/// Deliberate defects for proving that the self-check catches them.
enum class Fault {
    none,
    nonzero_sma_init,  // SpatialBias::zeros() starts away from zero
    broken_clamp,      // context_mask skips its clamp to [0, 1]
};

Fault parse_fault(const std::string& text);
std::string to_string(Fault fault);

/// Process-wide; only the self-check and tests set this.
void inject_fault(Fault fault) noexcept;
Fault active_fault() noexcept;

}  // namespace layerdiff
