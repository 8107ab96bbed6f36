#pragma once

#include <Eigen/Core>

#include "ctdse/measurement.hpp"
#include "ctdse/network.hpp"
#include "ctdse/powerflow.hpp"
#include "ctdse/wls.hpp"

namespace ctdse::dsse {

/// Polar feeder estimator from SCADA and pseudo measurements.
///
/// State layout: [V_0 .. V_{n-1}, theta of every non-substation bus in index order].
/// Angles are relative to the substation, whose angle is fixed at zero.
class DsseModel : public wls::MeasurementModel {
 public:
  DsseModel(NetworkCase feeder, MeasurementSet measurements);

  Eigen::Index state_size() const override { return 2 * feeder_.size() - 1; }
  Eigen::Index measurement_size() const override { return measurements_.rows(); }
  Eigen::VectorXd evaluate(const Eigen::VectorXd& x) const override;
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& x) const override;
  const Eigen::VectorXd& weights() const override { return weights_; }

  const NetworkCase& feeder() const { return feeder_; }
  const MeasurementSet& measurements() const { return measurements_; }
  int substation() const { return feeder_.slack_bus; }
  /// State column of theta_b, or -1 for the substation.
  int angle_column(int bus) const;

  BusVoltages voltages(const Eigen::VectorXd& x) const;
  /// State vector of a voltage profile; angles are re-referenced to the substation.
  Eigen::VectorXd state_of(const BusVoltages& voltages) const;
  /// [V_s, .., V_s, 0, .., 0] with V_s from the substation SCADA magnitude reading, else 1.0.
  Eigen::VectorXd flat_start() const;

  /// Copy of this model with one more substation magnitude reading of weight `weight`.
  DsseModel with_virtual_substation_vmag(double v, double weight) const;

  /// Gradient of the substation injection (P, Q) with respect to the state.
  void head_power_gradient(const Eigen::VectorXd& x, Eigen::VectorXd& dp, Eigen::VectorXd& dq) const;

 private:
  NetworkCase feeder_;
  MeasurementSet measurements_;
  Eigen::VectorXd weights_;
  AdmittanceMatrix adm_;
  Eigen::MatrixXd G_;
  Eigen::MatrixXd B_;
  std::vector<std::vector<int>> columns_;
  std::vector<int> angle_column_;
};

struct DsseOptions {
  double tolerance = 1e-4;
  int max_iterations = 50;
};

/// Gauss-Newton from the flat start.
wls::WlsResult solve_dsse(const DsseModel& model, const Eigen::VectorXd& z, const DsseOptions& options = {});

/// Gauss-Newton from a caller-supplied (hot) start.
wls::WlsResult solve_dsse_from(const DsseModel& model, const Eigen::VectorXd& z, const Eigen::VectorXd& x0,
                               const DsseOptions& options = {});

/// Power flowing from the substation into the feeder at state x.
HeadPower feeder_head_power(const Eigen::VectorXd& x, const DsseModel& model);

struct HeadPowerEstimate {
  HeadPower value;
  double var_p = 0.0;
  double var_q = 0.0;
};

/// Head power at the estimate with first-order variances from the estimate covariance.
HeadPowerEstimate head_power_estimate(const wls::WlsResult& result, const DsseModel& model);

}  // namespace ctdse::dsse
