#pragma once

#include <complex>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace ctdse {

using Complex = std::complex<double>;

enum class NodeKind { master, boundary, slave };

const char* to_string(NodeKind kind);

/// A network node. Powers are per-unit on the owning case's base_mva.
struct Bus {
  int id = 0;
  NodeKind kind = NodeKind::master;
  double base_kv = 1.0;
  double load_p = 0.0;
  double load_q = 0.0;
  double gen_p = 0.0;
  double gen_q = 0.0;
  double shunt_b = 0.0;
  /// Voltage magnitude setpoint; only read at the slack bus.
  double v_set = 1.0;

  /// Scheduled net injection (generation minus load).
  Complex scheduled_injection() const { return {gen_p - load_p, gen_q - load_q}; }
};

/// pi-model branch. The off-nominal tap sits on the `from` side.
struct Branch {
  int from = 0;
  int to = 0;
  double r = 0.0;
  double x = 0.0;
  double b_sh = 0.0;
  double tap = 1.0;
  /// Phase shift of the tap in radians.
  double shift = 0.0;

  Complex series_admittance() const { return 1.0 / Complex(r, x); }
};

struct NetworkCase {
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  double base_mva = 100.0;
  int slack_bus = 0;
  /// External (file) bus id for each normalized index.
  std::vector<int> external_ids;
  std::string name;

  int size() const { return static_cast<int>(buses.size()); }
  int index_of_external(int external_id) const;
  /// Buses adjacent to `bus`, in ascending order without duplicates.
  std::vector<int> neighbors(int bus) const;
  bool is_radial() const { return branches.size() + 1 == buses.size(); }
};

/// Checks the structural invariants of a case; throws InputError.
void validate(const NetworkCase& network, bool require_radial = false);
bool is_connected(const NetworkCase& network);

/// Link between transmission bus `transmission_bus` and the substation of feeder `feeder`.
struct BoundaryLink {
  int transmission_bus = 0;
  int feeder = 0;
  int feeder_bus = 0;
};

struct IntegratedCase {
  NetworkCase transmission;
  std::vector<NetworkCase> feeders;
  std::vector<BoundaryLink> boundary_links;

  const BoundaryLink& link_of(int feeder) const;
};

/// The boundary bus k of feeder `index` and its transmission neighbourhood N(i).
/// `nodes` lists k first, then the adjacent transmission buses in ascending order.
struct BoundarySystem {
  int index = 0;
  int boundary_bus = 0;
  std::vector<int> nodes;

  int size() const { return static_cast<int>(nodes.size()); }
  bool contains(int bus) const;
};

struct Partition {
  std::vector<NodeKind> transmission;
  std::vector<std::vector<NodeKind>> feeders;
  std::vector<BoundarySystem> boundaries;

  std::vector<int> master_buses() const;
  /// True when no transmission bus belongs to two boundary systems.
  bool boundaries_disjoint() const;
};

Partition partition(const IntegratedCase& integrated);

/// Rebases a feeder onto (boundary_base_kv, base_mva). The substation bus keeps
/// `boundary_base_kv`; other buses scale by the same kV ratio.
NetworkCase to_common_per_unit(const NetworkCase& feeder, double boundary_base_kv, double base_mva);

/// Rebases every feeder onto the transmission MVA base, keeping each feeder's
/// substation kV (ideal transformer at the boundary).
IntegratedCase harmonize(const IntegratedCase& integrated);

/// Nodal admittance matrix, dense; the largest shipped case has under 200 buses.
struct AdmittanceMatrix {
  Eigen::MatrixXcd Y;

  int size() const { return static_cast<int>(Y.rows()); }
  Eigen::MatrixXd G() const { return Y.real(); }
  Eigen::MatrixXd B() const { return Y.imag(); }
};

/// The four pi-model entries a branch contributes to Y.
struct BranchStamp {
  Complex ff, ft, tf, tt;
};

BranchStamp branch_stamp(const Branch& branch);

AdmittanceMatrix build_admittance(const NetworkCase& network);

}  // namespace ctdse
