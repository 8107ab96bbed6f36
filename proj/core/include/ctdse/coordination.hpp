#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ctdse/dsse.hpp"
#include "ctdse/measurement.hpp"
#include "ctdse/network.hpp"
#include "ctdse/powerflow.hpp"
#include "ctdse/tsse.hpp"
#include "ctdse/wls.hpp"

namespace ctdse::coordination {

/// Auxiliary measurements of one boundary system, 2M+3 rows:
/// [V_r(n) for n in N(i), V_x(n) for n in N(i), V_k^S, P^S + P^B, Q^S + Q^B].
struct BoundaryMeasurements {
  Eigen::VectorXd z;
  Eigen::VectorXd weights;
  /// Set when P^B, Q^B came from the load schedule instead of a meter.
  bool schedule_fallback = false;
  /// Components of the power rows.
  HeadPower slave;
  HeadPower boundary;
};

/// Builds z_y and W_y from the local estimates.
/// `injection_meters` holds scada_inj_p / scada_inj_q readings at the boundary bus (may be empty).
BoundaryMeasurements assemble_boundary(const wls::WlsResult& tsse_result, const wls::WlsResult& dsse_result,
                                       const dsse::DsseModel& dsse_model, const MeasurementSet& injection_meters,
                                       const BoundarySystem& bsys, const NetworkCase& transmission,
                                       const NoiseSpec& noise = {});

/// Boundary estimator over y = [v_n for n in N(i), alpha_n for n in N(i)].
/// The power rows are the flow from the master system into bus k, i.e. minus
/// the transmission-side injection at k.
class BoundaryModel : public wls::MeasurementModel {
 public:
  BoundaryModel(const BoundarySystem& bsys, const AdmittanceMatrix& adm, Eigen::VectorXd weights);

  Eigen::Index state_size() const override { return 2 * m_; }
  Eigen::Index measurement_size() const override { return 2 * m_ + 3; }
  Eigen::VectorXd evaluate(const Eigen::VectorXd& y) const override;
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& y) const override;
  const Eigen::VectorXd& weights() const override { return weights_; }

  /// (f_PMB, f_QMB) at y.
  HeadPower master_flow(const Eigen::VectorXd& y) const;

 private:
  int m_;
  /// G_kn, B_kn for n in N(i), in node order.
  Eigen::VectorXd g_;
  Eigen::VectorXd b_;
  Eigen::VectorXd weights_;
};

/// h(y) of the boundary estimator.
Eigen::VectorXd coordination_h(const Eigen::VectorXd& y, const BoundarySystem& bsys, const AdmittanceMatrix& adm);
/// Analytic [H^M; H^S; H^B].
Eigen::MatrixXd coordination_jacobian(const Eigen::VectorXd& y, const BoundarySystem& bsys,
                                      const AdmittanceMatrix& adm);

/// y of the boundary system read from a rectangular transmission state.
Eigen::VectorXd boundary_state(const Eigen::VectorXd& x_rect, const BoundarySystem& bsys);

struct Mismatch {
  double dp = 0.0;
  double dq = 0.0;
};

/// (P^S + P^B) - f_PMB(y) and the reactive analogue.
Mismatch boundary_mismatch(const Eigen::VectorXd& y, const BoundaryMeasurements& bmeas, const BoundarySystem& bsys,
                           const AdmittanceMatrix& adm);

struct BoundaryTrajectoryPoint {
  int iteration = 0;
  Mismatch mismatch;
  double objective = 0.0;
};

struct BoundaryResult {
  Eigen::VectorXd y0;
  wls::WlsResult result;
  std::vector<BoundaryTrajectoryPoint> trajectory;
  Mismatch before;
  Mismatch after;
  bool converged = false;
  std::string failure;
};

struct BoundaryOptions {
  double tolerance = 1e-8;
  int max_iterations = 50;
};

/// Gauss-Newton on the boundary model from the hot start y0. Divergence and
/// solver errors are captured in `failure` instead of thrown.
BoundaryResult solve_boundary(const BoundaryMeasurements& bmeas, const BoundarySystem& bsys,
                              const AdmittanceMatrix& adm, const Eigen::VectorXd& y0,
                              const BoundaryOptions& options = {});

struct CtdseOptions {
  dsse::DsseOptions dsse{1e-4, 50};
  BoundaryOptions boundary{1e-8, 50};
  bool coordination = true;
  bool update = true;
  /// Coordination + update rounds; one round is the standard procedure.
  int rounds = 1;
  double virtual_weight = 1e8;
  /// Gauss-Seidel passes when boundary systems share buses.
  int max_sweeps = 50;
};

/// Measurement sets of one trial.
struct TrialMeasurements {
  MeasurementSet transmission;
  std::vector<MeasurementSet> feeders;
  std::vector<MeasurementSet> boundary;
};

struct LocalEstimates {
  wls::WlsResult tsse;
  std::vector<wls::WlsResult> dsse;
};

struct CoordinationOutcome {
  std::vector<BoundaryResult> boundaries;
  int sweeps = 0;
  /// Every boundary converged and the sweep settled.
  bool converged = false;
};

struct PhaseTimes {
  double local_ms = 0.0;
  double coordination_ms = 0.0;
  double update_ms = 0.0;
};

struct CtdseResult {
  LocalEstimates local;
  std::vector<BoundaryMeasurements> boundary_measurements;
  CoordinationOutcome coordination;
  LocalEstimates refined;
  /// Refined transmission voltages (global reference).
  BusVoltages transmission;
  /// Refined feeder voltages; angles are global where `global_angles[i]` is set,
  /// otherwise relative to the substation.
  std::vector<BusVoltages> feeders;
  std::vector<bool> global_angles;
  PhaseTimes times;
};

/// One integrated T&D system with its placement plans and noise rule. Holds the
/// ground truth and the trial-invariant models; const methods are thread safe.
class CtdseSystem {
 public:
  /// `integrated` must already be harmonized onto one per-unit base.
  CtdseSystem(IntegratedCase integrated, ExperimentPlans plans, NoiseSpec noise);

  const IntegratedCase& integrated() const { return integrated_; }
  const Partition& partition() const { return partition_; }
  const ExperimentPlans& plans() const { return plans_; }
  const NoiseSpec& noise() const { return noise_; }
  const GlobalPowerFlow& truth() const { return truth_; }
  const AdmittanceMatrix& transmission_admittance() const { return adm_; }

  const TrialMeasurements& true_measurements() const { return true_; }
  TrialMeasurements noisy_measurements(std::uint64_t master_seed, std::uint64_t trial) const;

  /// Local -> coordination -> update. Errors are rethrown with a phase prefix.
  CtdseResult run(const TrialMeasurements& measurements, const CtdseOptions& options = {}) const;

 private:
  IntegratedCase integrated_;
  ExperimentPlans plans_;
  NoiseSpec noise_;
  Partition partition_;
  AdmittanceMatrix adm_;
  GlobalPowerFlow truth_;
  TrialMeasurements true_;
};

/// Convenience wrapper: builds the system, draws one noisy trial, runs the pipeline.
CtdseResult run_ctdse(const IntegratedCase& integrated, const ExperimentPlans& plans, const NoiseSpec& noise,
                      std::uint64_t seed, const CtdseOptions& options = {});

}  // namespace ctdse::coordination
