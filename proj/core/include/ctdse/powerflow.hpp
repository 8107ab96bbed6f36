#pragma once

#include <span>
#include <vector>

#include "ctdse/measurement.hpp"
#include "ctdse/network.hpp"

namespace ctdse {

/// Power entering a feeder at its substation, pu.
struct HeadPower {
  double p = 0.0;
  double q = 0.0;
};

/// Extra constant-power consumption placed on a transmission bus.
struct EquivalentLoad {
  int bus = 0;
  double p = 0.0;
  double q = 0.0;
};

struct PowerFlowOptions {
  double tolerance = 1e-10;
  int max_iterations = 30;
};

struct PowerFlowSolution {
  /// Angles in radians against the transmission slack.
  BusVoltages voltages;
  bool converged = false;
  int iterations = 0;
  /// Final power mismatch infinity-norm over non-slack buses.
  double mismatch = 0.0;
  /// Feeder solutions only: power drawn through the substation.
  HeadPower head;
};

/// Newton-Raphson in polar coordinates, flat start, every non-slack bus PQ.
/// Throws NumericalError(diverged) after max_iterations.
PowerFlowSolution solve_transmission_pf(const NetworkCase& network, std::span<const EquivalentLoad> equivalent_loads = {},
                                        const PowerFlowOptions& options = {});

/// Backward/forward sweep on a radial feeder with a fixed substation phasor.
PowerFlowSolution solve_feeder_pf(const NetworkCase& feeder, double head_v, double head_theta,
                                  const PowerFlowOptions& options = {1e-10, 100});

/// Substation injection of a feeder (flow from the boundary bus into the feeder).
HeadPower feeder_head_power(const NetworkCase& feeder, const BusVoltages& voltages);

struct GlobalPowerFlow {
  PowerFlowSolution transmission;
  /// Feeder voltages with angles in the transmission (global) reference.
  std::vector<PowerFlowSolution> feeders;
  std::vector<HeadPower> heads;
  int outer_iterations = 0;
  bool converged = false;
};

struct GlobalPowerFlowOptions {
  PowerFlowOptions transmission{1e-10, 30};
  PowerFlowOptions feeder{1e-10, 100};
  /// Bound on the boundary-voltage change between outer iterations.
  double tolerance = 1e-10;
  int max_outer_iterations = 50;
};

/// Master-slave splitting: alternate transmission PF (feeders as equivalent loads)
/// and feeder PFs (boundary voltages as heads) until the boundary voltages settle.
/// Feeders must already share the transmission per-unit base (see harmonize()).
GlobalPowerFlow solve_global_pf(const IntegratedCase& integrated, const GlobalPowerFlowOptions& options = {});

/// The integrated system as one network; feeder substations fold into their boundary bus.
struct MergedCase {
  NetworkCase network;
  /// merged index of every feeder bus
  std::vector<std::vector<int>> feeder_index;
};

MergedCase merge(const IntegratedCase& integrated);

/// Monolithic Newton-Raphson on the merged network, reported in the same layout as solve_global_pf.
GlobalPowerFlow solve_monolithic_pf(const IntegratedCase& integrated, const PowerFlowOptions& options = {1e-10, 30});

}  // namespace ctdse
