#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ctdse/network.hpp"

namespace ctdse {

enum class MeasurementType {
  pmu_voltage,            // voltage phasor at a bus
  pmu_current,            // branch current phasor at one end
  pmu_injection_current,  // nodal injection current phasor
  scada_vmag,
  scada_flow_p,
  scada_flow_q,
  scada_inj_p,  // metered local net injection (generation minus load)
  scada_inj_q,
  pseudo_inj_p,
  pseudo_inj_q,
};

enum class BranchEnd { from, to };

const char* to_string(MeasurementType type);
MeasurementType measurement_type_from_string(const std::string& name);

struct MeasurementKind {
  MeasurementType type = MeasurementType::scada_vmag;
  /// Bus index, or branch index for current and flow types.
  int element = 0;
  BranchEnd end = BranchEnd::from;

  bool is_phasor() const;
  bool is_pmu() const { return is_phasor(); }
  bool on_branch() const;
  int rows() const { return is_phasor() ? 2 : 1; }

  friend bool operator==(const MeasurementKind&, const MeasurementKind&) = default;
};

/// One meter reading. Phasors keep the rectangular real part in (value, sigma)
/// and the imaginary part in (value_im, sigma_im).
struct MeasurementRecord {
  MeasurementKind kind;
  double value = 0.0;
  double sigma = 1.0;
  double value_im = 0.0;
  double sigma_im = 1.0;
};

struct Subsystem {
  enum class Kind { transmission, feeder, boundary };
  Kind kind = Kind::transmission;
  int index = 0;

  std::string tag() const;
  friend bool operator==(const Subsystem&, const Subsystem&) = default;
};

/// Ordered readings; the order fixes the row order of z, h, H and W.
struct MeasurementSet {
  Subsystem owner;
  std::vector<MeasurementRecord> records;

  int rows() const;
  Eigen::VectorXd values() const;
  Eigen::VectorXd sigmas() const;
};

/// Maximum errors, read as 3-sigma bounds.
struct NoiseSpec {
  double max_err_pmu_mag = 0.01;  // fraction
  double max_err_pmu_ang = 0.01;  // radians
  double max_err_scada = 0.02;    // fraction
  double max_err_pseudo = 0.30;   // fraction
  double sigma_floor = 1e-4;      // pu
  double pseudo_sigma_floor = 1e-3;

  /// Throws InputError unless every maximum error is positive.
  void validate() const;
};

struct PlacementPlan {
  std::vector<MeasurementKind> entries;
};

/// Plans for every subsystem of an integrated case.
struct ExperimentPlans {
  PlacementPlan transmission;
  std::vector<PlacementPlan> feeders;
  /// Meters at each boundary bus (scada_inj_* on transmission bus indices).
  std::vector<PlacementPlan> boundary;
};

/// Voltage profile of one network, polar.
struct BusVoltages {
  Eigen::VectorXd v;
  Eigen::VectorXd theta;

  int size() const { return static_cast<int>(v.size()); }
  Complex phasor(int bus) const { return std::polar(v(bus), theta(bus)); }
};

/// Noiseless reading of `kind` on `network` at the given voltages.
/// Phasor readings return real and imaginary parts; scalar readings set only `.real()`.
Complex evaluate_measurement(const MeasurementKind& kind, const NetworkCase& network, const AdmittanceMatrix& adm,
                             const BusVoltages& state);

/// Checks that every plan entry references an existing element.
void check_plan(const PlacementPlan& plan, const NetworkCase& network);

MeasurementSet true_measurements(const BusVoltages& truth, const PlacementPlan& plan, const NetworkCase& network,
                                 const NoiseSpec& noise, Subsystem owner);

/// Standard deviation the noise rule assigns to a reading with the given true value(s).
void assign_sigmas(MeasurementRecord& record, const NoiseSpec& noise);

MeasurementSet add_noise(const MeasurementSet& set, const NoiseSpec& noise, std::uint64_t seed);

/// Diagonal of W = R^-1, one entry per row.
Eigen::VectorXd weights(const MeasurementSet& set);

/// Deterministic stream seed for (master seed, trial, subsystem).
std::uint64_t stream_seed(std::uint64_t master_seed, std::uint64_t trial, const Subsystem& owner);

/// Observable default plans: PMUs greedily placed on the transmission case,
/// substation SCADA plus pseudo injections on each feeder, injection meters at boundaries.
ExperimentPlans default_plans(const IntegratedCase& integrated);

}  // namespace ctdse
