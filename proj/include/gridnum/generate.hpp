#pragma once

// Seeded scenario templates for experiments.

#include <cstdint>
#include <string>
#include <vector>

#include "gridnum/model.hpp"

namespace gridnum {

/// Template names accepted by generate_scenario().
std::vector<std::string> scenario_templates();

/// uniform: box-only quadratic users with random coefficients.
/// peak: as uniform, with a contiguous block of slots carrying much higher b.
/// myopia-trap: every user owes a deferrable load spanning the horizon while
///   generation is expensive early and cheap late.
/// Deterministic for a given (template, T, n_users, seed).
Scenario generate_scenario(const std::string& name, int T, int n_users, std::uint64_t seed);

}  // namespace gridnum
