#include "ctdse/case_io.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <regex>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ctdse/errors.hpp"

namespace ctdse {

namespace {

using nlohmann::json;
using Code = InputError::Code;

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(Code::parse, path.string(), "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json(const std::string& text, const std::string& location) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError(Code::parse, location, std::string("invalid JSON: ") + e.what());
  }
}

void check_fields(const json& obj, std::initializer_list<const char*> allowed, const std::string& location,
                  const LoadOptions& options) {
  if (!obj.is_object()) throw InputError(Code::parse, location, "expected an object");
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (known) continue;
    if (options.strict) throw InputError(Code::unknown_field, location + "/" + key, "unknown field");
    if (options.warnings) options.warnings->push_back(location + "/" + key + ": unknown field ignored");
  }
}

double number(const json& obj, const char* key, const std::string& location, std::optional<double> fallback) {
  const auto it = obj.find(key);
  if (it == obj.end()) {
    if (fallback) return *fallback;
    throw InputError(Code::parse, location + "/" + key, "missing field");
  }
  if (!it->is_number()) throw InputError(Code::parse, location + "/" + key, "expected a number");
  return it->get<double>();
}

int integer(const json& obj, const char* key, const std::string& location) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw InputError(Code::parse, location + "/" + key, "missing field");
  if (!it->is_number_integer()) throw InputError(Code::parse, location + "/" + key, "expected an integer");
  return it->get<int>();
}

NodeKind node_kind_from_string(const std::string& s, const std::string& location) {
  if (s == "master") return NodeKind::master;
  if (s == "boundary") return NodeKind::boundary;
  if (s == "slave") return NodeKind::slave;
  throw InputError(Code::parse, location, "unknown bus kind '" + s + "'");
}

int bus_index(const NetworkCase& network, int external, const std::string& location) {
  const int index = network.index_of_external(external);
  if (index < 0) throw InputError(Code::unknown_bus, location, "unknown bus id " + std::to_string(external));
  return index;
}

NetworkCase case_from_json(const json& doc, const std::string& location, const LoadOptions& options) {
  check_fields(doc, {"format_version", "name", "base_mva", "slack_bus", "buses", "branches"}, location, options);
  if (doc.contains("format_version") && doc["format_version"] != 1) {
    throw InputError(Code::parse, location + "/format_version", "unsupported version");
  }
  NetworkCase network;
  network.name = doc.value("name", location);
  network.base_mva = number(doc, "base_mva", location, 100.0);
  if (!(network.base_mva > 0.0)) throw InputError(Code::invalid_base, location + "/base_mva", "must be positive");

  const auto buses = doc.find("buses");
  if (buses == doc.end() || !buses->is_array()) throw InputError(Code::parse, location + "/buses", "expected an array");
  std::set<int> seen;
  for (std::size_t b = 0; b < buses->size(); ++b) {
    const std::string loc = location + "/buses/" + std::to_string(b);
    const json& item = (*buses)[b];
    check_fields(item, {"id", "kind", "base_kv", "load_p", "load_q", "gen_p", "gen_q", "shunt_b", "v_set"}, loc,
                 options);
    Bus bus;
    const int id = integer(item, "id", loc);
    if (!seen.insert(id).second) {
      throw InputError(Code::duplicate_bus_id, loc + "/id", "duplicate bus id " + std::to_string(id));
    }
    bus.id = static_cast<int>(b);
    if (item.contains("kind")) bus.kind = node_kind_from_string(item["kind"].get<std::string>(), loc + "/kind");
    bus.base_kv = number(item, "base_kv", loc, 1.0);
    bus.load_p = number(item, "load_p", loc, 0.0);
    bus.load_q = number(item, "load_q", loc, 0.0);
    bus.gen_p = number(item, "gen_p", loc, 0.0);
    bus.gen_q = number(item, "gen_q", loc, 0.0);
    bus.shunt_b = number(item, "shunt_b", loc, 0.0);
    bus.v_set = number(item, "v_set", loc, 1.0);
    network.buses.push_back(bus);
    network.external_ids.push_back(id);
  }
  if (network.buses.empty()) throw InputError(Code::parse, location + "/buses", "no buses");
  network.slack_bus = bus_index(network, integer(doc, "slack_bus", location), location + "/slack_bus");

  const auto branches = doc.find("branches");
  if (branches == doc.end() || !branches->is_array()) {
    throw InputError(Code::parse, location + "/branches", "expected an array");
  }
  for (std::size_t l = 0; l < branches->size(); ++l) {
    const std::string loc = location + "/branches/" + std::to_string(l);
    const json& item = (*branches)[l];
    check_fields(item, {"from", "to", "r", "x", "b_sh", "tap", "shift"}, loc, options);
    Branch br;
    br.from = bus_index(network, integer(item, "from", loc), loc + "/from");
    br.to = bus_index(network, integer(item, "to", loc), loc + "/to");
    br.r = number(item, "r", loc, std::nullopt);
    br.x = number(item, "x", loc, std::nullopt);
    br.b_sh = number(item, "b_sh", loc, 0.0);
    br.tap = number(item, "tap", loc, 1.0);
    br.shift = number(item, "shift", loc, 0.0);
    network.branches.push_back(br);
  }
  validate(network);
  return network;
}

double parse_number(const std::string& token, const std::string& location) {
  std::size_t used = 0;
  double value = 0.0;
  try {
    value = std::stod(token, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != token.size()) throw InputError(Code::parse, location, "invalid number '" + token + "'");
  return value;
}

// Rows of a MATPOWER matrix block such as "mpc.bus = [ ... ];".
std::vector<std::vector<double>> matrix_block(const std::string& text, const std::string& name,
                                              const std::string& location, bool required) {
  const std::regex start("mpc\\." + name + "\\s*=\\s*\\[");
  std::smatch match;
  if (!std::regex_search(text, match, start)) {
    if (required) throw InputError(Code::parse, location, "missing mpc." + name);
    return {};
  }
  const std::size_t begin = match.position(0) + match.length(0);
  const std::size_t end = text.find(']', begin);
  if (end == std::string::npos) throw InputError(Code::parse, location, "unterminated mpc." + name);
  std::vector<std::vector<double>> rows;
  std::vector<double> row;
  std::istringstream body(text.substr(begin, end - begin));
  std::string line;
  while (std::getline(body, line)) {
    line = line.substr(0, line.find('%'));
    std::string token;
    for (char c : line + ";") {
      if (c == ';') {
        if (!token.empty()) row.push_back(parse_number(token, location + ":" + name));
        token.clear();
        if (!row.empty()) rows.push_back(std::move(row));
        row.clear();
      } else if (std::isspace(static_cast<unsigned char>(c)) || c == ',') {
        if (!token.empty()) row.push_back(parse_number(token, location + ":" + name));
        token.clear();
      } else {
        token += c;
      }
    }
  }
  return rows;
}

std::vector<MeasurementKind> parse_entries(const json& list, const NetworkCase& network, int substation,
                                           const std::string& location) {
  if (!list.is_array()) throw InputError(Code::invalid_plan, location, "expected an array of entries");
  std::vector<MeasurementKind> out;
  for (std::size_t e = 0; e < list.size(); ++e) {
    const std::string loc = location + "/" + std::to_string(e);
    const json& item = list[e];
    if (!item.is_object() || !item.contains("type")) throw InputError(Code::invalid_plan, loc, "entry needs a type");
    const std::string type = item["type"].get<std::string>();
    BranchEnd end = BranchEnd::from;
    if (item.contains("end")) {
      const std::string s = item["end"].get<std::string>();
      if (s != "from" && s != "to") throw InputError(Code::invalid_plan, loc + "/end", "expected 'from' or 'to'");
      end = s == "from" ? BranchEnd::from : BranchEnd::to;
    }
    auto bus = [&] { return bus_index(network, integer(item, "bus", loc), loc + "/bus"); };
    auto branch = [&] {
      const int l = integer(item, "branch", loc);
      if (l < 0 || l >= static_cast<int>(network.branches.size())) {
        throw InputError(Code::unknown_branch, loc + "/branch", "unknown branch " + std::to_string(l));
      }
      return l;
    };
    if (type == "pseudo_injections") {
      for (int b = 0; b < network.size(); ++b) {
        if (b == substation) continue;
        out.push_back({MeasurementType::pseudo_inj_p, b, BranchEnd::from});
        out.push_back({MeasurementType::pseudo_inj_q, b, BranchEnd::from});
      }
    } else if (type == "scada_flow") {
      const int l = branch();
      out.push_back({MeasurementType::scada_flow_p, l, end});
      out.push_back({MeasurementType::scada_flow_q, l, end});
    } else if (type == "scada_injection") {
      const int b = bus();
      out.push_back({MeasurementType::scada_inj_p, b, BranchEnd::from});
      out.push_back({MeasurementType::scada_inj_q, b, BranchEnd::from});
    } else {
      MeasurementType t;
      try {
        t = measurement_type_from_string(type);
      } catch (const InputError& err) {
        throw InputError(Code::invalid_plan, loc + "/type", err.what());
      }
      MeasurementKind kind{t, 0, end};
      kind.element = kind.on_branch() ? branch() : bus();
      out.push_back(kind);
    }
  }
  return out;
}

}  // namespace

CaseFormat case_format_from_string(const std::string& name) {
  if (name == "json") return CaseFormat::json;
  if (name == "matpower" || name == "matpower_like") return CaseFormat::matpower_like;
  throw InputError(Code::parse, "", "unknown case format '" + name + "'");
}

NetworkCase parse_case_json(const std::string& text, const std::string& location, const LoadOptions& options) {
  return case_from_json(parse_json(text, location), location, options);
}

NetworkCase parse_case_matpower(const std::string& text, const std::string& location) {
  NetworkCase network;
  network.name = location;
  std::smatch match;
  if (std::regex_search(text, match, std::regex("mpc\\.baseMVA\\s*=\\s*([0-9.eE+-]+)"))) {
    network.base_mva = std::stod(match[1].str());
  }
  if (!(network.base_mva > 0.0)) throw InputError(Code::invalid_base, location + ":baseMVA", "must be positive");

  const auto bus_rows = matrix_block(text, "bus", location, true);
  const auto gen_rows = matrix_block(text, "gen", location, false);
  const auto branch_rows = matrix_block(text, "branch", location, true);
  const double base = network.base_mva;

  std::set<int> seen;
  int slack_external = -1;
  for (std::size_t b = 0; b < bus_rows.size(); ++b) {
    const auto& r = bus_rows[b];
    const std::string loc = location + ":bus:" + std::to_string(b + 1);
    if (r.size() < 10) throw InputError(Code::parse, loc, "bus rows need at least 10 columns");
    const int id = static_cast<int>(r[0]);
    if (!seen.insert(id).second) {
      throw InputError(Code::duplicate_bus_id, loc, "duplicate bus id " + std::to_string(id));
    }
    Bus bus;
    bus.id = static_cast<int>(b);
    bus.load_p = r[2] / base;
    bus.load_q = r[3] / base;
    bus.shunt_b = r[5] / base;
    bus.base_kv = r[9] > 0.0 ? r[9] : 1.0;
    bus.v_set = r[7];
    if (static_cast<int>(r[1]) == 3) {
      if (slack_external >= 0) throw InputError(Code::parse, loc, "more than one reference bus");
      slack_external = id;
    }
    network.buses.push_back(bus);
    network.external_ids.push_back(id);
  }
  if (slack_external < 0) throw InputError(Code::parse, location, "no reference (type 3) bus");
  network.slack_bus = network.index_of_external(slack_external);

  for (std::size_t g = 0; g < gen_rows.size(); ++g) {
    const auto& r = gen_rows[g];
    const std::string loc = location + ":gen:" + std::to_string(g + 1);
    if (r.size() < 8) throw InputError(Code::parse, loc, "gen rows need at least 8 columns");
    if (r[7] <= 0.0) continue;
    Bus& bus = network.buses[bus_index(network, static_cast<int>(r[0]), loc)];
    bus.gen_p += r[1] / base;
    bus.gen_q += r[2] / base;
    if (bus.id == network.slack_bus) bus.v_set = r[5];
  }

  for (std::size_t l = 0; l < branch_rows.size(); ++l) {
    const auto& r = branch_rows[l];
    const std::string loc = location + ":branch:" + std::to_string(l + 1);
    if (r.size() < 11) throw InputError(Code::parse, loc, "branch rows need at least 11 columns");
    if (r[10] <= 0.0) continue;
    Branch br;
    br.from = bus_index(network, static_cast<int>(r[0]), loc);
    br.to = bus_index(network, static_cast<int>(r[1]), loc);
    br.r = r[2];
    br.x = r[3];
    br.b_sh = r[4];
    br.tap = r[8] == 0.0 ? 1.0 : r[8];
    br.shift = r[9] * std::numbers::pi / 180.0;
    network.branches.push_back(br);
  }
  validate(network);
  return network;
}

NetworkCase load_case(const std::filesystem::path& path, CaseFormat format, const LoadOptions& options) {
  const std::string text = read_file(path);
  NetworkCase network = format == CaseFormat::json ? parse_case_json(text, path.string(), options)
                                                   : parse_case_matpower(text, path.string());
  if (network.name == path.string()) network.name = path.stem().string();
  return network;
}

NetworkCase load_case(const std::filesystem::path& path, const LoadOptions& options) {
  return load_case(path, path.extension() == ".m" ? CaseFormat::matpower_like : CaseFormat::json, options);
}

LoadedIntegratedCase load_integrated(const std::filesystem::path& path, const LoadOptions& options) {
  const std::string loc = path.string();
  const json doc = parse_json(read_file(path), loc);
  check_fields(doc, {"format_version", "name", "transmission", "feeders", "boundary_links", "placement"}, loc, options);
  const std::filesystem::path dir = path.parent_path();

  auto network = [&](const json& item, const std::string& where) {
    if (item.is_object() && item.contains("path")) {
      check_fields(item, {"path", "format"}, where, options);
      const std::filesystem::path p = dir / item["path"].get<std::string>();
      return item.contains("format") ? load_case(p, case_format_from_string(item["format"].get<std::string>()), options)
                                     : load_case(p, options);
    }
    return case_from_json(item, where, options);
  };

  IntegratedCase integrated;
  if (!doc.contains("transmission")) throw InputError(Code::parse, loc + "/transmission", "missing field");
  integrated.transmission = network(doc["transmission"], loc + "/transmission");
  if (!doc.contains("feeders") || !doc["feeders"].is_array()) {
    throw InputError(Code::parse, loc + "/feeders", "expected an array");
  }
  for (std::size_t f = 0; f < doc["feeders"].size(); ++f) {
    integrated.feeders.push_back(network(doc["feeders"][f], loc + "/feeders/" + std::to_string(f)));
  }
  if (!doc.contains("boundary_links") || !doc["boundary_links"].is_array()) {
    throw InputError(Code::parse, loc + "/boundary_links", "expected an array");
  }
  for (std::size_t b = 0; b < doc["boundary_links"].size(); ++b) {
    const std::string where = loc + "/boundary_links/" + std::to_string(b);
    const json& item = doc["boundary_links"][b];
    check_fields(item, {"transmission_bus", "feeder", "feeder_bus"}, where, options);
    BoundaryLink link;
    const int transmission_external = integer(item, "transmission_bus", where);
    link.transmission_bus = integrated.transmission.index_of_external(transmission_external);
    if (link.transmission_bus < 0) {
      throw InputError(Code::boundary_bus_missing, where + "/transmission_bus",
                       "bus " + std::to_string(transmission_external) + " is not in the transmission case");
    }
    link.feeder = integer(item, "feeder", where);
    if (link.feeder < 0 || link.feeder >= static_cast<int>(integrated.feeders.size())) {
      throw InputError(Code::missing_boundary_link, where + "/feeder", "unknown feeder index");
    }
    link.feeder_bus =
        bus_index(integrated.feeders[link.feeder], integer(item, "feeder_bus", where), where + "/feeder_bus");
    integrated.boundary_links.push_back(link);
  }

  LoadedIntegratedCase out;
  out.integrated = harmonize(integrated);
  (void)partition(out.integrated);

  if (doc.contains("placement")) {
    const std::string where = loc + "/placement";
    const json& placement = doc["placement"];
    check_fields(placement, {"transmission", "feeders", "boundary"}, where, options);
    ExperimentPlans plans = default_plans(out.integrated);
    const auto& tx = out.integrated.transmission;
    auto is_default = [](const json& j) { return j.is_string() && j.get<std::string>() == "default"; };
    if (placement.contains("transmission") && !is_default(placement["transmission"])) {
      plans.transmission.entries = parse_entries(placement["transmission"], tx, -1, where + "/transmission");
    }
    const std::size_t f = out.integrated.feeders.size();
    for (const char* section : {"feeders", "boundary"}) {
      if (!placement.contains(section)) continue;
      const json& list = placement[section];
      if (!list.is_array() || list.size() != f) {
        throw InputError(Code::invalid_plan, where + "/" + section, "expected one entry per feeder");
      }
      for (std::size_t i = 0; i < f; ++i) {
        if (is_default(list[i])) continue;
        const std::string w = where + "/" + section + "/" + std::to_string(i);
        if (std::string(section) == "feeders") {
          const auto& feeder = out.integrated.feeders[i];
          plans.feeders[i].entries = parse_entries(list[i], feeder, feeder.slack_bus, w);
        } else {
          plans.boundary[i].entries = parse_entries(list[i], tx, -1, w);
        }
      }
    }
    check_plan(plans.transmission, tx);
    for (std::size_t i = 0; i < f; ++i) {
      check_plan(plans.feeders[i], out.integrated.feeders[i]);
      check_plan(plans.boundary[i], tx);
    }
    out.plans = std::move(plans);
  }
  return out;
}

ExperimentPlans plans_or_default(const LoadedIntegratedCase& loaded) {
  return loaded.plans ? *loaded.plans : default_plans(loaded.integrated);
}

std::string power_flow_to_json(const IntegratedCase& integrated, const GlobalPowerFlow& solution) {
  auto buses = [](const NetworkCase& network, const BusVoltages& v) {
    json arr = json::array();
    for (int b = 0; b < network.size(); ++b) {
      arr.push_back({{"id", network.external_ids.empty() ? b : network.external_ids[b]},
                     {"v", v.v(b)},
                     {"theta", v.theta(b)}});
    }
    return arr;
  };
  json doc;
  doc["converged"] = solution.converged;
  doc["outer_iterations"] = solution.outer_iterations;
  doc["transmission"] = {{"name", integrated.transmission.name},
                         {"buses", buses(integrated.transmission, solution.transmission.voltages)}};
  json feeders = json::array();
  for (std::size_t f = 0; f < integrated.feeders.size(); ++f) {
    feeders.push_back({{"name", integrated.feeders[f].name},
                       {"p_head", solution.heads[f].p},
                       {"q_head", solution.heads[f].q},
                       {"buses", buses(integrated.feeders[f], solution.feeders[f].voltages)}});
  }
  doc["feeders"] = std::move(feeders);
  return doc.dump(2);
}

}  // namespace ctdse
