#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include <json.hpp>

#include "gridnum/model.hpp"

namespace gridnum {

/// Parses and validates a scenario document. Throws ParseError for structural
/// problems and ValidationError for violated invariants.
Scenario parse_scenario(const nlohmann::json& doc);
Scenario parse_scenario_text(const std::string& text);
Scenario load_scenario(const std::filesystem::path& path);

/// Canonical form: per-slot arrays everywhere, internal units, no "units" block.
nlohmann::json scenario_to_json(const Scenario& s);
void save_scenario(const Scenario& s, const std::filesystem::path& path);
std::string dump_scenario(const Scenario& s);

/// CSV with header `user,slot,q,r,d`; the provider pseudo-rows carry
/// `provider,slot,supply,spot_g,0`.
void write_allocation_csv(std::ostream& out, const Scenario& s, const Allocation& x);

}  // namespace gridnum
