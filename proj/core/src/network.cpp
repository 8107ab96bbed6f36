#include "ctdse/network.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <set>

#include "ctdse/errors.hpp"

namespace ctdse {

const char* to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::master:
      return "master";
    case NodeKind::boundary:
      return "boundary";
    case NodeKind::slave:
      return "slave";
  }
  return "?";
}

int NetworkCase::index_of_external(int external_id) const {
  for (int i = 0; i < static_cast<int>(external_ids.size()); ++i) {
    if (external_ids[i] == external_id) return i;
  }
  if (external_ids.empty() && external_id >= 0 && external_id < size()) return external_id;
  return -1;
}

std::vector<int> NetworkCase::neighbors(int bus) const {
  std::set<int> out;
  for (const auto& br : branches) {
    if (br.from == bus) out.insert(br.to);
    if (br.to == bus) out.insert(br.from);
  }
  return {out.begin(), out.end()};
}

bool is_connected(const NetworkCase& network) {
  const int n = network.size();
  if (n == 0) return false;
  std::vector<std::vector<int>> adj(n);
  for (const auto& br : network.branches) {
    adj[br.from].push_back(br.to);
    adj[br.to].push_back(br.from);
  }
  std::vector<bool> seen(n, false);
  std::queue<int> pending;
  pending.push(0);
  seen[0] = true;
  int visited = 1;
  while (!pending.empty()) {
    int u = pending.front();
    pending.pop();
    for (int v : adj[u]) {
      if (!seen[v]) {
        seen[v] = true;
        ++visited;
        pending.push(v);
      }
    }
  }
  return visited == n;
}

void validate(const NetworkCase& network, bool require_radial) {
  using Code = InputError::Code;
  const int n = network.size();
  if (n == 0) throw InputError(Code::parse, network.name, "case has no buses");
  if (network.base_mva <= 0.0) throw InputError(Code::invalid_base, network.name, "base_mva must be positive");
  if (network.slack_bus < 0 || network.slack_bus >= n) {
    throw InputError(Code::unknown_bus, network.name, "slack bus out of range");
  }
  for (int i = 0; i < n; ++i) {
    if (network.buses[i].id != i) {
      throw InputError(Code::parse, network.name + "/buses/" + std::to_string(i), "bus ids are not normalized");
    }
  }
  for (std::size_t b = 0; b < network.branches.size(); ++b) {
    const auto& br = network.branches[b];
    const std::string where = network.name + "/branches/" + std::to_string(b);
    if (br.from < 0 || br.from >= n || br.to < 0 || br.to >= n) {
      throw InputError(Code::unknown_bus, where, "branch endpoint out of range");
    }
    if (br.from == br.to) throw InputError(Code::self_loop, where, "branch connects a bus to itself");
    if (br.r * br.r + br.x * br.x <= 0.0) throw InputError(Code::zero_impedance, where, "zero-impedance branch");
    if (br.tap <= 0.0) throw InputError(Code::parse, where, "tap ratio must be positive");
  }
  if (!is_connected(network)) throw InputError(Code::disconnected, network.name, "network graph is disconnected");
  if (require_radial && !network.is_radial()) {
    throw InputError(Code::not_radial, network.name,
                     "feeder is not radial: " + std::to_string(network.branches.size()) + " branches for " +
                         std::to_string(n) + " buses");
  }
}

const BoundaryLink& IntegratedCase::link_of(int feeder) const {
  for (const auto& link : boundary_links) {
    if (link.feeder == feeder) return link;
  }
  throw InputError(InputError::Code::missing_boundary_link, "feeders/" + std::to_string(feeder),
                   "feeder has no boundary link");
}

bool BoundarySystem::contains(int bus) const { return std::find(nodes.begin(), nodes.end(), bus) != nodes.end(); }

std::vector<int> Partition::master_buses() const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(transmission.size()); ++i) {
    if (transmission[i] == NodeKind::master) out.push_back(i);
  }
  return out;
}

bool Partition::boundaries_disjoint() const {
  std::set<int> seen;
  for (const auto& bsys : boundaries) {
    for (int n : bsys.nodes) {
      if (!seen.insert(n).second) return false;
    }
  }
  return true;
}

Partition partition(const IntegratedCase& integrated) {
  using Code = InputError::Code;
  const auto& tx = integrated.transmission;
  const int feeder_count = static_cast<int>(integrated.feeders.size());
  if (feeder_count < 1) throw InputError(Code::missing_boundary_link, "feeders", "integrated case needs at least one feeder");

  Partition part;
  part.transmission.assign(tx.size(), NodeKind::master);
  part.feeders.resize(feeder_count);

  std::vector<int> link_count(feeder_count, 0);
  for (const auto& link : integrated.boundary_links) {
    if (link.feeder < 0 || link.feeder >= feeder_count) {
      throw InputError(Code::missing_boundary_link, "boundary_links", "link references unknown feeder " + std::to_string(link.feeder));
    }
    ++link_count[link.feeder];
  }
  for (int f = 0; f < feeder_count; ++f) {
    if (link_count[f] != 1) {
      throw InputError(Code::missing_boundary_link, "feeders/" + std::to_string(f),
                       link_count[f] == 0 ? "feeder has no boundary link" : "feeder has more than one boundary link");
    }
  }

  for (int f = 0; f < feeder_count; ++f) {
    const auto& link = integrated.link_of(f);
    const auto& feeder = integrated.feeders[f];
    if (link.transmission_bus < 0 || link.transmission_bus >= tx.size()) {
      throw InputError(Code::boundary_bus_missing, "boundary_links",
                       "boundary bus " + std::to_string(link.transmission_bus) + " not in transmission case");
    }
    if (link.feeder_bus < 0 || link.feeder_bus >= feeder.size()) {
      throw InputError(Code::unknown_bus, "boundary_links", "feeder substation bus out of range");
    }
    if (link.feeder_bus != feeder.slack_bus) {
      throw InputError(Code::invalid_config, "boundary_links", "feeder substation must be the feeder's slack bus");
    }
    const auto& sub = feeder.buses[link.feeder_bus];
    if (sub.load_p != 0.0 || sub.load_q != 0.0 || sub.gen_p != 0.0 || sub.gen_q != 0.0 || sub.shunt_b != 0.0) {
      throw InputError(Code::invalid_config, feeder.name + "/buses/" + std::to_string(link.feeder_bus),
                       "feeder substation bus must not carry load, generation or shunts");
    }
    if (part.transmission[link.transmission_bus] == NodeKind::boundary) {
      throw InputError(Code::invalid_config, "boundary_links", "two feeders share boundary bus");
    }
    part.transmission[link.transmission_bus] = NodeKind::boundary;
    part.feeders[f].assign(feeder.size(), NodeKind::slave);
    part.feeders[f][link.feeder_bus] = NodeKind::boundary;

    BoundarySystem bsys;
    bsys.index = f;
    bsys.boundary_bus = link.transmission_bus;
    bsys.nodes.push_back(link.transmission_bus);
    for (int nb : tx.neighbors(link.transmission_bus)) bsys.nodes.push_back(nb);
    part.boundaries.push_back(std::move(bsys));
  }
  return part;
}

NetworkCase to_common_per_unit(const NetworkCase& feeder, double boundary_base_kv, double base_mva) {
  if (!(boundary_base_kv > 0.0) || !(base_mva > 0.0) || !(feeder.base_mva > 0.0)) {
    throw InputError(InputError::Code::invalid_base, feeder.name, "bases must be positive");
  }
  const double old_kv = feeder.buses.at(feeder.slack_bus).base_kv;
  if (!(old_kv > 0.0)) throw InputError(InputError::Code::invalid_base, feeder.name, "substation base_kv must be positive");

  const double kv_ratio = boundary_base_kv / old_kv;
  const double power_scale = feeder.base_mva / base_mva;
  // Z_base = kV^2 / S, so z_new = z_old * Z_old / Z_new.
  const double z_scale = 1.0 / (power_scale * kv_ratio * kv_ratio);

  NetworkCase out = feeder;
  out.base_mva = base_mva;
  for (auto& bus : out.buses) {
    bus.base_kv *= kv_ratio;
    bus.load_p *= power_scale;
    bus.load_q *= power_scale;
    bus.gen_p *= power_scale;
    bus.gen_q *= power_scale;
    bus.shunt_b /= z_scale;
  }
  for (auto& br : out.branches) {
    br.r *= z_scale;
    br.x *= z_scale;
    br.b_sh /= z_scale;
  }
  return out;
}

IntegratedCase harmonize(const IntegratedCase& integrated) {
  IntegratedCase out = integrated;
  for (auto& feeder : out.feeders) {
    feeder = to_common_per_unit(feeder, feeder.buses.at(feeder.slack_bus).base_kv, integrated.transmission.base_mva);
  }
  return out;
}

BranchStamp branch_stamp(const Branch& branch) {
  const Complex ys = branch.series_admittance();
  const Complex half_shunt(0.0, branch.b_sh / 2.0);
  const Complex t = std::polar(branch.tap, branch.shift);
  BranchStamp s;
  s.ff = (ys + half_shunt) / std::norm(t);
  s.ft = -ys / std::conj(t);
  s.tf = -ys / t;
  s.tt = ys + half_shunt;
  return s;
}

AdmittanceMatrix build_admittance(const NetworkCase& network) {
  const int n = network.size();
  AdmittanceMatrix adm;
  adm.Y = Eigen::MatrixXcd::Zero(n, n);
  for (std::size_t b = 0; b < network.branches.size(); ++b) {
    const auto& br = network.branches[b];
    if (br.r * br.r + br.x * br.x <= 0.0) {
      throw InputError(InputError::Code::zero_impedance, network.name + "/branches/" + std::to_string(b),
                       "zero-impedance branch");
    }
    const BranchStamp s = branch_stamp(br);
    adm.Y(br.from, br.from) += s.ff;
    adm.Y(br.from, br.to) += s.ft;
    adm.Y(br.to, br.from) += s.tf;
    adm.Y(br.to, br.to) += s.tt;
  }
  for (int i = 0; i < n; ++i) adm.Y(i, i) += Complex(0.0, network.buses[i].shunt_b);
  return adm;
}

}  // namespace ctdse
