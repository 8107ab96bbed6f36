#include "ctdse/tsse.hpp"

#include <cmath>

#include "ctdse/errors.hpp"

namespace ctdse::tsse {

namespace {

// Rows of Re/Im of sum_j a_j V_j in rectangular coordinates.
void stamp_complex(Eigen::MatrixXd& rows, int n, int bus, Complex a) {
  rows(0, bus) += a.real();
  rows(0, n + bus) -= a.imag();
  rows(1, bus) += a.imag();
  rows(1, n + bus) += a.real();
}

}  // namespace

Eigen::MatrixXd phasor_rows(const MeasurementKind& kind, const NetworkCase& network, const AdmittanceMatrix& adm) {
  const int n = network.size();
  Eigen::MatrixXd rows = Eigen::MatrixXd::Zero(2, 2 * n);
  switch (kind.type) {
    case MeasurementType::pmu_voltage:
      rows(0, kind.element) = 1.0;
      rows(1, n + kind.element) = 1.0;
      break;
    case MeasurementType::pmu_current: {
      const auto& br = network.branches.at(kind.element);
      const BranchStamp s = branch_stamp(br);
      if (kind.end == BranchEnd::from) {
        stamp_complex(rows, n, br.from, s.ff);
        stamp_complex(rows, n, br.to, s.ft);
      } else {
        stamp_complex(rows, n, br.from, s.tf);
        stamp_complex(rows, n, br.to, s.tt);
      }
      break;
    }
    case MeasurementType::pmu_injection_current:
      for (int j = 0; j < n; ++j) {
        if (adm.Y(kind.element, j) != Complex(0.0, 0.0)) stamp_complex(rows, n, j, adm.Y(kind.element, j));
      }
      break;
    default:
      throw InputError(InputError::Code::invalid_plan, network.name,
                       std::string("linear estimator accepts PMU phasors only, got ") + to_string(kind.type));
  }
  return rows;
}

TsseModel build_tsse_model(const NetworkCase& network, const AdmittanceMatrix& adm, const MeasurementSet& set) {
  PlacementPlan plan;
  for (const auto& rec : set.records) plan.entries.push_back(rec.kind);
  check_plan(plan, network);

  TsseModel model;
  model.bus_count = network.size();
  const int m = set.rows();
  model.H.resize(m, 2 * network.size());
  model.row_record.reserve(m);
  int row = 0;
  for (int r = 0; r < static_cast<int>(set.records.size()); ++r) {
    const auto& rec = set.records[r];
    if (!rec.kind.is_phasor()) {
      throw InputError(InputError::Code::invalid_plan, network.name + "/measurements/" + std::to_string(r),
                       std::string("linear estimator accepts PMU phasors only, got ") + to_string(rec.kind.type));
    }
    model.H.middleRows(row, 2) = phasor_rows(rec.kind, network, adm);
    model.row_record.push_back(r);
    model.row_record.push_back(r);
    row += 2;
  }
  model.weights = weights(set);
  return model;
}

wls::WlsResult solve_tsse(const TsseModel& model, const Eigen::VectorXd& z) {
  return wls::linear_wls(model.H, z, model.weights);
}

void append_virtual_phasors(TsseModel& model, Eigen::VectorXd& z, std::span<const VirtualPhasor> phasors,
                            double weight) {
  const int n = model.bus_count;
  const Eigen::Index old_rows = model.H.rows();
  const Eigen::Index extra = 2 * static_cast<Eigen::Index>(phasors.size());
  model.H.conservativeResize(old_rows + extra, Eigen::NoChange);
  model.H.bottomRows(extra).setZero();
  model.weights.conservativeResize(old_rows + extra);
  z.conservativeResize(old_rows + extra);
  Eigen::Index row = old_rows;
  for (const auto& vp : phasors) {
    model.H(row, vp.bus) = 1.0;
    model.H(row + 1, n + vp.bus) = 1.0;
    model.weights(row) = weight;
    model.weights(row + 1) = weight;
    z(row) = vp.value.real();
    z(row + 1) = vp.value.imag();
    model.row_record.push_back(-1);
    model.row_record.push_back(-1);
    row += 2;
  }
}

BusVoltages to_polar(const Eigen::VectorXd& x_hat) {
  const Eigen::Index n = x_hat.size() / 2;
  BusVoltages out;
  out.v.resize(n);
  out.theta.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.v(i) = std::hypot(x_hat(i), x_hat(n + i));
    out.theta(i) = std::atan2(x_hat(n + i), x_hat(i));
  }
  return out;
}

Eigen::VectorXd to_rectangular(const BusVoltages& voltages) {
  const int n = voltages.size();
  Eigen::VectorXd x(2 * n);
  for (int i = 0; i < n; ++i) {
    x(i) = voltages.v(i) * std::cos(voltages.theta(i));
    x(n + i) = voltages.v(i) * std::sin(voltages.theta(i));
  }
  return x;
}

SplitStates split_states(const Eigen::VectorXd& x_hat, const Partition& partition) {
  const Eigen::Index n = x_hat.size() / 2;
  auto phasor = [&](int bus) { return Complex(x_hat(bus), x_hat(n + bus)); };
  SplitStates out;
  out.master_buses = partition.master_buses();
  out.master.resize(static_cast<Eigen::Index>(out.master_buses.size()));
  for (std::size_t i = 0; i < out.master_buses.size(); ++i) out.master(i) = phasor(out.master_buses[i]);
  for (const auto& bsys : partition.boundaries) {
    out.boundary_buses.push_back(bsys.boundary_bus);
    Eigen::VectorXcd group(1);
    group(0) = phasor(bsys.boundary_bus);
    out.boundary.push_back(group);
  }
  return out;
}

}  // namespace ctdse::tsse
