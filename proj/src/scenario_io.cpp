#include "gridnum/scenario_io.hpp"

#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "gridnum/format.hpp"

namespace gridnum {

using nlohmann::json;

namespace {

struct Units {
  double power = 1.0;   // to kW
  double energy = 1.0;  // to kWh
  double price = 1.0;   // to $/kWh
};

double lookup_factor(const json& units, const char* key, const std::map<std::string, double>& table) {
  if (!units.contains(key)) return 1.0;
  const auto& v = units.at(key);
  if (!v.is_string()) throw ParseError(std::string("units.") + key + " must be a string");
  const auto it = table.find(v.get<std::string>());
  if (it == table.end()) throw ParseError(std::string("unknown unit for ") + key + ": " + v.get<std::string>());
  return it->second;
}

Units parse_units(const json& doc) {
  Units u;
  if (!doc.contains("units")) return u;
  const auto& units = doc.at("units");
  if (!units.is_object()) throw ParseError("units must be an object");
  u.power = lookup_factor(units, "power", {{"W", 1e-3}, {"kW", 1.0}, {"MW", 1e3}});
  u.energy = lookup_factor(units, "energy", {{"Wh", 1e-3}, {"kWh", 1.0}, {"MWh", 1e3}});
  u.price = lookup_factor(units, "price", {{"$/kWh", 1.0}, {"$/MWh", 1e-3}});
  return u;
}

const json& field(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object()) throw ParseError(where + " must be an object");
  if (!obj.contains(key)) throw ParseError(where + ": missing key '" + key + "'");
  return obj.at(key);
}

double number(const json& v, const std::string& where) {
  if (!v.is_number()) throw ParseError(where + " must be a number");
  return v.get<double>();
}

int integer(const json& v, const std::string& where) {
  if (!v.is_number_integer()) throw ParseError(where + " must be an integer");
  return v.get<int>();
}

// A per-slot series is either a scalar (broadcast) or an array of length T.
std::vector<double> series(const json& v, int T, double scale, const std::string& where) {
  std::vector<double> out;
  if (v.is_number()) {
    out.assign(T, v.get<double>() * scale);
  } else if (v.is_array()) {
    if (static_cast<int>(v.size()) != T) throw ParseError(where + " must have " + std::to_string(T) + " entries");
    out.reserve(T);
    for (std::size_t t = 0; t < v.size(); ++t) out.push_back(number(v[t], where) * scale);
  } else {
    throw ParseError(where + " must be a number or an array");
  }
  return out;
}

std::vector<double> optional_series(const json& obj, const char* key, int T, double fallback, double scale,
                                    const std::string& where) {
  if (!obj.contains(key)) return std::vector<double>(T, fallback);
  return series(obj.at(key), T, scale, where + "." + key);
}

UserModel parse_user(const json& j, int T, const Units& un, std::size_t index) {
  const std::string where = "users[" + std::to_string(index) + "]";
  if (!j.is_object()) throw ParseError(where + " must be an object");
  UserModel u;
  u.id = j.contains("id") ? j.at("id").get<std::string>() : "u" + std::to_string(index);

  const auto& util = field(j, "utility", where);
  const std::string kind = util.contains("kind") ? util.at("kind").get<std::string>() : "quadratic";
  if (kind == "quadratic") {
    u.utility.kind = UtilityKind::quadratic;
    u.utility.a = series(field(util, "a", where + ".utility"), T, un.power / un.price, where + ".utility.a");
    u.utility.b = series(field(util, "b", where + ".utility"), T, un.price, where + ".utility.b");
  } else if (kind == "logarithmic") {
    u.utility.kind = UtilityKind::logarithmic;
    u.utility.a = series(field(util, "a", where + ".utility"), T, un.power, where + ".utility.a");
    u.utility.b = series(field(util, "b", where + ".utility"), T, un.price * un.power, where + ".utility.b");
  } else {
    throw ParseError(where + ".utility.kind must be 'quadratic' or 'logarithmic'");
  }

  u.q_min = optional_series(j, "q_min", T, 0.0, un.power, where);
  u.q_max = series(field(j, "q_max", where), T, un.power, where + ".q_max");

  if (j.contains("deferrables")) {
    const auto& arr = j.at("deferrables");
    if (!arr.is_array()) throw ParseError(where + ".deferrables must be an array");
    for (std::size_t k = 0; k < arr.size(); ++k) {
      const std::string dw = where + ".deferrables[" + std::to_string(k) + "]";
      DeferrableLoad dl;
      dl.window_start = integer(field(arr[k], "window_start", dw), dw + ".window_start");
      dl.window_end = integer(field(arr[k], "window_end", dw), dw + ".window_end");
      dl.energy_required = number(field(arr[k], "energy_required", dw), dw + ".energy_required") * un.energy;
      dl.per_slot_max = number(field(arr[k], "per_slot_max", dw), dw + ".per_slot_max") * un.power;
      u.deferrables.push_back(dl);
    }
  }

  if (j.contains("battery") && !j.at("battery").is_null()) {
    const auto& bj = j.at("battery");
    const std::string bw = where + ".battery";
    Battery b;
    b.capacity = number(field(bj, "capacity", bw), bw + ".capacity") * un.energy;
    b.charge_rate_max = number(field(bj, "charge_rate_max", bw), bw + ".charge_rate_max") * un.power;
    b.discharge_rate_max = number(field(bj, "discharge_rate_max", bw), bw + ".discharge_rate_max") * un.power;
    b.efficiency = bj.contains("efficiency") ? number(bj.at("efficiency"), bw + ".efficiency") : 1.0;
    b.initial_level = bj.contains("initial_level") ? number(bj.at("initial_level"), bw + ".initial_level") * un.energy : 0.0;
    u.battery = b;
  }
  return u;
}

}  // namespace

Scenario parse_scenario(const json& doc) {
  if (!doc.is_object()) throw ParseError("scenario must be a JSON object");
  const Units un = parse_units(doc);
  Scenario s;
  try {
    const auto& h = field(doc, "horizon", "scenario");
    s.horizon.slots = integer(field(h, "T", "horizon"), "horizon.T");
    s.horizon.slot_duration = h.contains("slot_duration") ? number(h.at("slot_duration"), "horizon.slot_duration") : 1.0;
    if (s.horizon.slots < 1) throw ValidationError("horizon must have at least one slot");
    const int T = s.horizon.slots;

    const auto& users = field(doc, "users", "scenario");
    if (!users.is_array()) throw ParseError("users must be an array");
    for (std::size_t i = 0; i < users.size(); ++i) s.users.push_back(parse_user(users[i], T, un, i));

    const auto& pj = field(doc, "provider", "scenario");
    s.provider.c1 = optional_series(pj, "c1", T, 0.0, un.price, "provider");
    s.provider.c2 = series(field(pj, "c2", "provider"), T, un.price / un.power, "provider.c2");
    s.provider.capacity = series(field(pj, "capacity", "provider"), T, un.power, "provider.capacity");

    if (doc.contains("spot") && !doc.at("spot").is_null()) {
      const auto& sj = doc.at("spot");
      SpotMarket m;
      m.pi0 = series(field(sj, "pi0", "spot"), T, un.price, "spot.pi0");
      m.kappa = optional_series(sj, "kappa", T, 0.0, un.price / un.power, "spot");
      m.g_max = series(field(sj, "g_max", "spot"), T, un.power, "spot.g_max");
      s.spot = m;
    }
    if (doc.contains("seed")) {
      const auto& sd = doc.at("seed");
      if (!sd.is_number_unsigned() && !(sd.is_number_integer() && sd.get<std::int64_t>() >= 0))
        throw ParseError("seed must be a nonnegative integer");
      s.seed = sd.get<std::uint64_t>();
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed scenario: ") + e.what());
  }
  validate(s);
  return s;
}

Scenario parse_scenario_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what());
  }
  return parse_scenario(doc);
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open scenario file: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario_text(buf.str());
}

json scenario_to_json(const Scenario& s) {
  json doc;
  doc["horizon"] = {{"T", s.horizon.slots}, {"slot_duration", s.horizon.slot_duration}};
  json users = json::array();
  for (const auto& u : s.users) {
    json j;
    j["id"] = u.id;
    j["utility"] = {{"kind", u.utility.kind == UtilityKind::quadratic ? "quadratic" : "logarithmic"},
                    {"a", u.utility.a},
                    {"b", u.utility.b}};
    j["q_min"] = u.q_min;
    j["q_max"] = u.q_max;
    json defs = json::array();
    for (const auto& dl : u.deferrables)
      defs.push_back({{"window_start", dl.window_start},
                      {"window_end", dl.window_end},
                      {"energy_required", dl.energy_required},
                      {"per_slot_max", dl.per_slot_max}});
    j["deferrables"] = defs;
    if (u.battery) {
      const auto& b = *u.battery;
      j["battery"] = {{"capacity", b.capacity},
                      {"charge_rate_max", b.charge_rate_max},
                      {"discharge_rate_max", b.discharge_rate_max},
                      {"efficiency", b.efficiency},
                      {"initial_level", b.initial_level}};
    }
    users.push_back(j);
  }
  doc["users"] = users;
  doc["provider"] = {{"c1", s.provider.c1}, {"c2", s.provider.c2}, {"capacity", s.provider.capacity}};
  if (s.spot) doc["spot"] = {{"pi0", s.spot->pi0}, {"kappa", s.spot->kappa}, {"g_max", s.spot->g_max}};
  doc["seed"] = s.seed;
  return doc;
}

std::string dump_scenario(const Scenario& s) { return scenario_to_json(s).dump(2) + "\n"; }

void save_scenario(const Scenario& s, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write scenario file: " + path.string());
  out << dump_scenario(s);
}

void write_allocation_csv(std::ostream& out, const Scenario& s, const Allocation& x) {
  check_shape(s, x);
  out << "user,slot,q,r,d\n";
  for (std::size_t i = 0; i < s.users.size(); ++i)
    for (int t = 0; t < s.slots(); ++t)
      out << s.users[i].id << ',' << t << ',' << fmt_num(x.q(i, t)) << ',' << fmt_num(x.r(i, t)) << ','
          << fmt_num(x.d(i, t)) << '\n';
  for (int t = 0; t < s.slots(); ++t)
    out << "provider," << t << ',' << fmt_num(x.supply[t]) << ',' << fmt_num(x.spot_g[t]) << ",0\n";
}

}  // namespace gridnum
