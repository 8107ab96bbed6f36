#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ctdse/coordination.hpp"
#include "ctdse/measurement.hpp"

namespace ctdse::harness {

struct Rmse {
  double mag_percent = 0.0;
  double angle_deg = 0.0;
};

/// Magnitude RMSE relative to the true magnitude (percent) and absolute angle RMSE (degrees)
/// over the buses in `group`. Throws InputError on an empty group.
Rmse rmse(const BusVoltages& estimate, const BusVoltages& truth, const std::vector<int>& group);

struct ExperimentConfig {
  std::filesystem::path case_path;
  NoiseSpec noise;
  int trials = 200;
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "out";
  coordination::CtdseOptions options;
  bool strict = true;
};

/// Parses a TOML experiment definition. The case path resolves against `base_dir`;
/// the output directory is taken as given.
ExperimentConfig parse_config(const std::string& text, const std::string& location,
                              const std::filesystem::path& base_dir);
ExperimentConfig load_config(const std::filesystem::path& path);

struct BoundaryTrialStats {
  coordination::Mismatch before;
  coordination::Mismatch after;
  int iterations = 0;
  bool converged = false;
  bool schedule_fallback = false;
  std::vector<coordination::BoundaryTrajectoryPoint> trajectory;
};

struct TrialRecord {
  std::uint64_t trial = 0;
  bool ok = false;
  std::string error;

  Rmse tsse_boundary;
  /// Magnitude only; the feeder estimator has no absolute angle.
  Rmse dsse_boundary;
  Rmse ctdse_boundary;
  Rmse tsse_master;
  Rmse ctdse_master;
  /// Angles relative to the substation.
  Rmse dsse_slave;
  /// Global angles when coordination succeeded, relative otherwise.
  Rmse ctdse_slave;

  double dsse_iterations = 0.0;
  int dsse_max_iterations = 0;
  /// Coordination passes over all boundary systems.
  int sweeps = 0;
  /// Every boundary converged and the sweep settled.
  bool coordination_converged = false;
  std::vector<BoundaryTrialStats> boundaries;
  coordination::PhaseTimes times;
};

/// Named numeric columns of a trial, in report order.
std::vector<std::pair<std::string, double>> trial_columns(const TrialRecord& record, int boundary_count);

/// Scores one pipeline run against the ground truth of `system`.
TrialRecord score_trial(const coordination::CtdseSystem& system, const coordination::CtdseResult& result,
                        std::uint64_t trial);

struct Aggregate {
  std::string name;
  /// Arithmetic mean over successful trials.
  double mean = 0.0;
  /// Root of the mean square over successful trials (RMSE columns only).
  double pooled = 0.0;
};

struct ExperimentReport {
  std::string case_name;
  std::uint64_t seed = 0;
  int boundary_count = 0;
  std::vector<TrialRecord> trials;
  std::vector<Aggregate> aggregates;
  int failures = 0;
};

/// Runs trials [0, trials) of `system`, in parallel up to `threads` (0: TDSE_THREADS or hardware).
std::vector<TrialRecord> run_trials(const coordination::CtdseSystem& system,
                                    const coordination::CtdseOptions& options, std::uint64_t seed, int trials,
                                    int threads = 0);

std::vector<Aggregate> aggregate(const std::vector<TrialRecord>& trials, int boundary_count);

ExperimentReport run_experiment(const ExperimentConfig& config);

/// Writes summary.json, trials.csv, mismatch_traj.csv, rmse_by_group.csv and timing.csv.
void emit_reports(const ExperimentReport& report, const std::filesystem::path& dir);

/// Fixed scientific notation with 12 significant digits.
std::string format_number(double value);

int thread_count(int requested = 0);

}  // namespace ctdse::harness
