#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ctdse/case_io.hpp"
#include "ctdse/coordination.hpp"
#include "ctdse/errors.hpp"
#include "ctdse/harness.hpp"
#include "ctdse/tsse.hpp"
#include "ctdse/wls.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kInput = 2;
constexpr int kNumerical = 3;
constexpr double kDegrees = 180.0 / std::numbers::pi;

using namespace ctdse;

bool is_integrated_file(const std::filesystem::path& path) {
  if (path.extension() != ".json") return false;
  std::ifstream in(path);
  try {
    const auto doc = nlohmann::json::parse(in);
    return doc.is_object() && doc.contains("transmission");
  } catch (const nlohmann::json::exception&) {
    return false;
  }
}

struct Common {
  std::optional<std::uint64_t> seed;
  std::optional<int> trials;
  std::string out;
  bool no_coordination = false;
  bool quiet = false;
};

int cmd_run(const std::string& config_path, const Common& common) {
  auto config = harness::load_config(config_path);
  if (common.seed) config.seed = *common.seed;
  if (common.trials) {
    if (*common.trials < 1) throw InputError(InputError::Code::invalid_config, "--trials", "must be at least 1");
    config.trials = *common.trials;
  }
  if (!common.out.empty()) config.output_dir = common.out;
  if (common.no_coordination) config.options.coordination = false;
  const auto report = harness::run_experiment(config);
  harness::emit_reports(report, config.output_dir);
  if (!common.quiet) {
    std::cout << "case " << report.case_name << ", " << report.trials.size() << " trials, " << report.failures
              << " failures, seed " << report.seed << "\n";
    for (const auto& a : report.aggregates) {
      if (a.name.find("_mag") != std::string::npos || a.name.find("ang") != std::string::npos) {
        std::cout << "  " << a.name << " = " << harness::format_number(a.mean) << "\n";
      }
    }
    std::cout << "reports written to " << config.output_dir.string() << "\n";
  }
  return report.failures == static_cast<int>(report.trials.size()) ? kNumerical : kOk;
}

int cmd_pf(const std::string& case_path, const Common& common) {
  const auto loaded = load_integrated(case_path);
  const auto split = solve_global_pf(loaded.integrated);
  const auto mono = solve_monolithic_pf(loaded.integrated);
  const std::string dump = power_flow_to_json(loaded.integrated, split);
  if (!common.out.empty()) {
    std::ofstream(common.out) << dump << "\n";
  } else {
    std::cout << dump << "\n";
  }
  double diff = (split.transmission.voltages.v - mono.transmission.voltages.v).lpNorm<Eigen::Infinity>();
  diff = std::max(diff, (split.transmission.voltages.theta - mono.transmission.voltages.theta).lpNorm<Eigen::Infinity>());
  for (std::size_t f = 0; f < split.feeders.size(); ++f) {
    diff = std::max(diff, (split.feeders[f].voltages.v - mono.feeders[f].voltages.v).lpNorm<Eigen::Infinity>());
    diff = std::max(diff,
                    (split.feeders[f].voltages.theta - mono.feeders[f].voltages.theta).lpNorm<Eigen::Infinity>());
  }
  if (!common.quiet) {
    std::cerr << "splitting: " << split.outer_iterations << " outer iterations; max deviation from monolithic NR "
              << harness::format_number(diff) << "\n";
  }
  return kOk;
}

void print_voltages(const char* title, const NetworkCase& network, const BusVoltages& estimate,
                    const BusVoltages& truth, bool angles_relative) {
  std::printf("%s (%s)\n", title, network.name.c_str());
  std::printf("  %8s %12s %12s %14s %14s\n", "bus", "v_est", "v_true", "theta_est_deg", "theta_true_deg");
  const double ref = angles_relative ? truth.theta(network.slack_bus) : 0.0;
  for (int b = 0; b < network.size(); ++b) {
    std::printf("  %8d %12.6f %12.6f %14.6f %14.6f\n", network.external_ids.empty() ? b : network.external_ids[b],
                estimate.v(b), truth.v(b), estimate.theta(b) * kDegrees, (truth.theta(b) - ref) * kDegrees);
  }
}

int cmd_estimate(const std::string& case_path, const std::string& phase, const Common& common) {
  const auto loaded = load_integrated(case_path);
  const coordination::CtdseSystem system(loaded.integrated, plans_or_default(loaded), NoiseSpec{});
  coordination::CtdseOptions options;
  options.coordination = phase == "ctdse" && !common.no_coordination;
  const auto result = system.run(system.noisy_measurements(common.seed.value_or(1), 0), options);
  const auto record = harness::score_trial(system, result, 0);
  if (!common.quiet) {
    const auto& integrated = system.integrated();
    print_voltages("transmission", integrated.transmission, result.transmission,
                   system.truth().transmission.voltages, false);
    for (std::size_t f = 0; f < integrated.feeders.size(); ++f) {
      print_voltages(result.global_angles[f] ? "feeder, global angles" : "feeder, angles relative to substation",
                     integrated.feeders[f], result.feeders[f], system.truth().feeders[f].voltages,
                     !result.global_angles[f]);
    }
    for (std::size_t b = 0; b < result.coordination.boundaries.size(); ++b) {
      const auto& br = result.coordination.boundaries[b];
      std::printf("boundary %zu: %s in %d iterations, |dP| %.3e -> %.3e, |dQ| %.3e -> %.3e%s\n", b,
                  br.converged ? "converged" : "not converged", br.result.iterations, std::abs(br.before.dp),
                  std::abs(br.after.dp), std::abs(br.before.dq), std::abs(br.after.dq),
                  result.boundary_measurements[b].schedule_fallback ? " (schedule-based boundary injection)" : "");
    }
    std::printf("RMSE boundary |V|: tsse %.4f%%, dsse %.4f%%, ctdse %.4f%%\n", record.tsse_boundary.mag_percent,
                record.dsse_boundary.mag_percent, record.ctdse_boundary.mag_percent);
    std::printf("RMSE slave angle: dsse (relative) %.4f deg, ctdse %.4f deg\n", record.dsse_slave.angle_deg,
                record.ctdse_slave.angle_deg);
  }
  return kOk;
}

int cmd_validate(const std::string& case_path, const Common& common) {
  if (!is_integrated_file(case_path)) {
    const NetworkCase network = load_case(case_path);
    if (!common.quiet) {
      std::printf("%s: %d buses, %zu branches, %s\n", network.name.c_str(), network.size(), network.branches.size(),
                  network.is_radial() ? "radial" : "meshed");
    }
    return kOk;
  }
  std::vector<std::string> warnings;
  const auto loaded = load_integrated(case_path, {false, &warnings});
  const auto& integrated = loaded.integrated;
  const auto plans = plans_or_default(loaded);
  const coordination::CtdseSystem system(integrated, plans, NoiseSpec{});
  const auto& tx = integrated.transmission;
  const auto model = tsse::build_tsse_model(tx, system.transmission_admittance(), system.true_measurements().transmission);
  const auto rank = wls::observable_rank(model.H, model.weights);
  bool ok = rank == model.H.cols();
  if (!common.quiet) {
    for (const auto& w : warnings) std::printf("warning: %s\n", w.c_str());
    std::printf("transmission %s: %d buses, %zu branches, %zu PMU readings, rank %ld of %ld (%s)\n",
                tx.name.c_str(), tx.size(), tx.branches.size(), plans.transmission.entries.size(),
                static_cast<long>(rank), static_cast<long>(model.H.cols()), ok ? "observable" : "unobservable");
  }
  for (std::size_t f = 0; f < integrated.feeders.size(); ++f) {
    const auto& feeder = integrated.feeders[f];
    const dsse::DsseModel dm(feeder, system.true_measurements().feeders[f]);
    const auto x = dm.state_of(system.truth().feeders[f].voltages);
    const auto frank = wls::observable_rank(dm.jacobian(x), dm.weights());
    const bool fok = frank == dm.state_size();
    ok = ok && fok;
    const auto& bsys = system.partition().boundaries[f];
    if (!common.quiet) {
      std::printf("feeder %s: %d buses, %zu readings, rank %ld of %ld (%s); boundary bus %d, |N| = %d\n",
                  feeder.name.c_str(), feeder.size(), plans.feeders[f].entries.size(), static_cast<long>(frank),
                  static_cast<long>(dm.state_size()), fok ? "observable" : "unobservable",
                  tx.external_ids.empty() ? bsys.boundary_bus : tx.external_ids[bsys.boundary_bus], bsys.size());
    }
  }
  if (!common.quiet) {
    std::printf("boundary systems %s\n", system.partition().boundaries_disjoint() ? "disjoint" : "overlapping");
  }
  if (!ok) throw NumericalError(NumericalError::Code::unobservable, "placement leaves the state unobservable");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coordinated transmission and distribution state estimation"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--seed", common.seed, "Master random seed");
    cmd->add_option("--out", common.out, "Output directory (run) or file (pf)");
    cmd->add_flag("--no-coordination", common.no_coordination, "Skip the coordination and update phases");
    cmd->add_flag("--quiet", common.quiet, "Suppress console output");
  };

  std::string config_path;
  auto* run = app.add_subcommand("run", "Run a Monte Carlo experiment from a TOML configuration");
  run->add_option("config", config_path, "Experiment configuration")->required();
  run->add_option("--trials", common.trials, "Number of trials");
  add_common(run);

  std::string case_path;
  auto* pf = app.add_subcommand("pf", "Solve the global power flow and dump it as JSON");
  pf->add_option("case", case_path, "Integrated case file")->required();
  add_common(pf);

  std::string phase = "ctdse";
  auto* estimate = app.add_subcommand("estimate", "Run one noisy trial and print the estimates");
  estimate->add_option("case", case_path, "Integrated case file")->required();
  estimate->add_option("--phase", phase, "local or ctdse")->check(CLI::IsMember({"local", "ctdse"}));
  add_common(estimate);

  auto* validate = app.add_subcommand("validate", "Check a case file and its observability");
  validate->add_option("case", case_path, "Case file")->required();
  add_common(validate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  const std::string& target = run->parsed() ? config_path : case_path;
  if (!std::filesystem::is_regular_file(target)) {
    std::cerr << "error: file not found: " << target << "\n\n" << app.help();
    return kUsage;
  }
  try {
    if (run->parsed()) return cmd_run(config_path, common);
    if (pf->parsed()) return cmd_pf(case_path, common);
    if (estimate->parsed()) return cmd_estimate(case_path, phase, common);
    return cmd_validate(case_path, common);
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kInput;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInput;
  }
}
