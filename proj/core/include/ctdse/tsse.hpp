#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "ctdse/measurement.hpp"
#include "ctdse/network.hpp"
#include "ctdse/wls.hpp"

namespace ctdse::tsse {

/// Linear PMU model over X = [V_r1..V_rN, V_x1..V_xN].
struct TsseModel {
  Eigen::MatrixXd H;
  Eigen::VectorXd weights;
  /// Index of the source MeasurementRecord for every row of H.
  std::vector<int> row_record;
  int bus_count = 0;

  Eigen::Index rows() const { return H.rows(); }
};

/// Rows of H for one PMU reading (two rows: real, imaginary).
Eigen::MatrixXd phasor_rows(const MeasurementKind& kind, const NetworkCase& network, const AdmittanceMatrix& adm);

/// Builds H_t and W_t from the kinds and sigmas of `set`. Throws InputError on non-PMU kinds.
TsseModel build_tsse_model(const NetworkCase& network, const AdmittanceMatrix& adm, const MeasurementSet& set);

/// One-shot linear estimate; throws UnobservableError when H_t lacks full column rank.
wls::WlsResult solve_tsse(const TsseModel& model, const Eigen::VectorXd& z);

struct VirtualPhasor {
  int bus = 0;
  Complex value;
};

/// Appends voltage-phasor rows with a common weight; `z` grows accordingly.
void append_virtual_phasors(TsseModel& model, Eigen::VectorXd& z, std::span<const VirtualPhasor> phasors, double weight);

BusVoltages to_polar(const Eigen::VectorXd& x_hat);
Eigen::VectorXd to_rectangular(const BusVoltages& voltages);

/// Estimate restricted to master buses and to each boundary bus.
struct SplitStates {
  std::vector<int> master_buses;
  Eigen::VectorXcd master;
  std::vector<int> boundary_buses;
  std::vector<Eigen::VectorXcd> boundary;
};

SplitStates split_states(const Eigen::VectorXd& x_hat, const Partition& partition);

}  // namespace ctdse::tsse
