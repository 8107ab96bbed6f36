#include "ctdse/harness.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>
#include <toml.hpp>

#include "ctdse/case_io.hpp"
#include "ctdse/errors.hpp"

namespace ctdse::harness {

namespace {

using Code = InputError::Code;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kDegrees = 180.0 / std::numbers::pi;

// Running sums of squared relative magnitude and absolute angle errors.
struct ErrorSums {
  double mag = 0.0;
  double ang = 0.0;
  int count = 0;

  void add(double v_hat, double v, double th_hat, double th) {
    const double dm = (v_hat - v) / v;
    mag += dm * dm;
    ang += (th_hat - th) * (th_hat - th);
    ++count;
  }

  Rmse result() const {
    if (count == 0) throw InputError(Code::invalid_config, "rmse", "empty node group");
    return {std::sqrt(mag / count) * 100.0, std::sqrt(ang / count) * kDegrees};
  }
};

void check_keys(const toml::table& table, std::initializer_list<const char*> allowed, const std::string& location) {
  for (const auto& [key, value] : table) {
    bool known = false;
    for (const char* a : allowed) known = known || key.str() == a;
    if (!known) {
      throw InputError(Code::unknown_field, location + "." + std::string(key.str()), "unknown configuration key");
    }
  }
}

const toml::table* section(const toml::table& root, const char* name, const std::string& location) {
  const auto* node = root.get(name);
  if (!node) return nullptr;
  const auto* table = node->as_table();
  if (!table) throw InputError(Code::invalid_config, location + "." + name, "expected a table");
  return table;
}

template <typename T>
T read(const toml::table& table, const char* key, T fallback, const std::string& location) {
  const auto* node = table.get(key);
  if (!node) return fallback;
  if constexpr (std::is_same_v<T, double>) {
    if (auto v = node->value<double>()) return *v;
  } else if constexpr (std::is_same_v<T, bool>) {
    if (auto v = node->value<bool>()) return *v;
  } else if constexpr (std::is_same_v<T, std::int64_t>) {
    if (auto v = node->value<std::int64_t>()) return *v;
  } else {
    if (auto v = node->value<std::string>()) return *v;
  }
  throw InputError(Code::invalid_config, location + "." + key, "value has the wrong type");
}

std::string csv_escape(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError(Code::invalid_config, path.string(), "cannot open file for writing");
  out << content;
  if (!out) throw InputError(Code::invalid_config, path.string(), "write failed");
}

}  // namespace

Rmse rmse(const BusVoltages& estimate, const BusVoltages& truth, const std::vector<int>& group) {
  ErrorSums sums;
  for (int b : group) sums.add(estimate.v(b), truth.v(b), estimate.theta(b), truth.theta(b));
  return sums.result();
}

ExperimentConfig parse_config(const std::string& text, const std::string& location,
                              const std::filesystem::path& base_dir) {
  toml::table root;
  try {
    root = toml::parse(text, location);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << e.description() << " at line " << e.source().begin.line;
    throw InputError(Code::parse, location, msg.str());
  }
  check_keys(root, {"experiment", "noise", "tolerances", "toggles"}, location);
  ExperimentConfig config;

  const auto* exp = section(root, "experiment", location);
  if (!exp) throw InputError(Code::invalid_config, location + ".experiment", "missing section");
  const std::string where = location + ".experiment";
  check_keys(*exp, {"case", "trials", "seed", "output", "strict"}, where);
  const std::string case_path = read<std::string>(*exp, "case", "", where);
  if (case_path.empty()) throw InputError(Code::invalid_config, where + ".case", "missing case path");
  config.case_path = base_dir / case_path;
  config.trials = static_cast<int>(read<std::int64_t>(*exp, "trials", 200, where));
  config.seed = static_cast<std::uint64_t>(read<std::int64_t>(*exp, "seed", 1, where));
  config.output_dir = read<std::string>(*exp, "output", "out", where);
  config.strict = read<bool>(*exp, "strict", true, where);
  if (config.trials < 1) throw InputError(Code::invalid_config, where + ".trials", "must be at least 1");

  if (const auto* noise = section(root, "noise", location)) {
    const std::string w = location + ".noise";
    check_keys(*noise,
               {"max_err_pmu_mag", "max_err_pmu_ang", "max_err_scada", "max_err_pseudo", "sigma_floor",
                "pseudo_sigma_floor"},
               w);
    auto& n = config.noise;
    n.max_err_pmu_mag = read<double>(*noise, "max_err_pmu_mag", n.max_err_pmu_mag, w);
    n.max_err_pmu_ang = read<double>(*noise, "max_err_pmu_ang", n.max_err_pmu_ang, w);
    n.max_err_scada = read<double>(*noise, "max_err_scada", n.max_err_scada, w);
    n.max_err_pseudo = read<double>(*noise, "max_err_pseudo", n.max_err_pseudo, w);
    n.sigma_floor = read<double>(*noise, "sigma_floor", n.sigma_floor, w);
    n.pseudo_sigma_floor = read<double>(*noise, "pseudo_sigma_floor", n.pseudo_sigma_floor, w);
  }
  config.noise.validate();

  auto& opt = config.options;
  if (const auto* tol = section(root, "tolerances", location)) {
    const std::string w = location + ".tolerances";
    check_keys(*tol, {"eps_d", "eps_c", "max_iterations"}, w);
    opt.dsse.tolerance = read<double>(*tol, "eps_d", opt.dsse.tolerance, w);
    opt.boundary.tolerance = read<double>(*tol, "eps_c", opt.boundary.tolerance, w);
    const int max_it = static_cast<int>(read<std::int64_t>(*tol, "max_iterations", 50, w));
    opt.dsse.max_iterations = max_it;
    opt.boundary.max_iterations = max_it;
    if (!(opt.dsse.tolerance > 0.0) || !(opt.boundary.tolerance > 0.0) || max_it < 1) {
      throw InputError(Code::invalid_config, w, "tolerances and iteration limits must be positive");
    }
  }
  if (const auto* tog = section(root, "toggles", location)) {
    const std::string w = location + ".toggles";
    check_keys(*tog, {"coordination", "update", "rounds", "virtual_weight", "max_sweeps"}, w);
    opt.coordination = read<bool>(*tog, "coordination", opt.coordination, w);
    opt.update = read<bool>(*tog, "update", opt.update, w);
    opt.rounds = static_cast<int>(read<std::int64_t>(*tog, "rounds", opt.rounds, w));
    opt.virtual_weight = read<double>(*tog, "virtual_weight", opt.virtual_weight, w);
    opt.max_sweeps = static_cast<int>(read<std::int64_t>(*tog, "max_sweeps", opt.max_sweeps, w));
    if (opt.rounds < 1 || opt.max_sweeps < 1 || !(opt.virtual_weight > 0.0)) {
      throw InputError(Code::invalid_config, w, "rounds, max_sweeps and virtual_weight must be positive");
    }
  }
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(Code::parse, path.string(), "cannot open configuration file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string(), path.parent_path());
}

TrialRecord score_trial(const coordination::CtdseSystem& system, const coordination::CtdseResult& result,
                        std::uint64_t trial) {
  TrialRecord rec;
  rec.trial = trial;
  rec.ok = true;
  const auto& truth = system.truth();
  const auto& integrated = system.integrated();
  const auto& part = system.partition();
  const BusVoltages& tx_truth = truth.transmission.voltages;
  const int f = static_cast<int>(integrated.feeders.size());

  std::vector<int> boundary_buses;
  for (const auto& b : part.boundaries) boundary_buses.push_back(b.boundary_bus);
  const BusVoltages tsse_local = tsse::to_polar(result.local.tsse.x);
  rec.tsse_boundary = rmse(tsse_local, tx_truth, boundary_buses);
  rec.ctdse_boundary = rmse(result.transmission, tx_truth, boundary_buses);
  const auto masters = part.master_buses();
  if (!masters.empty()) {
    rec.tsse_master = rmse(tsse_local, tx_truth, masters);
    rec.ctdse_master = rmse(result.transmission, tx_truth, masters);
  } else {
    rec.tsse_master = rec.ctdse_master = {kNaN, kNaN};
  }

  ErrorSums dsse_sub, dsse_slave, ctdse_slave;
  double iterations = 0.0;
  for (int i = 0; i < f; ++i) {
    const auto& feeder = integrated.feeders[i];
    const int sub = feeder.slack_bus;
    const BusVoltages& ft = truth.feeders[i].voltages;
    const Eigen::VectorXd& x = result.local.dsse[i].x;
    const double ref = ft.theta(sub);
    dsse_sub.add(x(sub), ft.v(sub), 0.0, 0.0);
    const auto& ctdse = result.feeders[i];
    const double ctdse_ref = result.global_angles[i] ? 0.0 : ref;
    for (int b = 0; b < feeder.size(); ++b) {
      if (b == sub) continue;
      // Local state layout: magnitudes, then angles of non-substation buses in index order.
      const int angle_col = feeder.size() + (b < sub ? b : b - 1);
      dsse_slave.add(x(b), ft.v(b), x(angle_col), ft.theta(b) - ref);
      ctdse_slave.add(ctdse.v(b), ft.v(b), ctdse.theta(b), ft.theta(b) - ctdse_ref);
    }
    iterations += result.local.dsse[i].iterations;
    rec.dsse_max_iterations = std::max(rec.dsse_max_iterations, result.local.dsse[i].iterations);
  }
  rec.dsse_boundary = {dsse_sub.result().mag_percent, kNaN};
  if (dsse_slave.count > 0) {
    rec.dsse_slave = dsse_slave.result();
    rec.ctdse_slave = ctdse_slave.result();
  } else {
    rec.dsse_slave = rec.ctdse_slave = {kNaN, kNaN};
  }
  rec.dsse_iterations = f > 0 ? iterations / f : 0.0;

  rec.boundaries.resize(f);
  for (int i = 0; i < f && i < static_cast<int>(result.coordination.boundaries.size()); ++i) {
    const auto& b = result.coordination.boundaries[i];
    auto& s = rec.boundaries[i];
    s.before = b.before;
    s.after = b.after;
    s.iterations = b.result.iterations;
    s.converged = b.converged;
    s.schedule_fallback = result.boundary_measurements[i].schedule_fallback;
    s.trajectory = b.trajectory;
  }
  rec.sweeps = result.coordination.sweeps;
  rec.coordination_converged = result.coordination.converged;
  rec.times = result.times;
  return rec;
}

std::vector<std::pair<std::string, double>> trial_columns(const TrialRecord& r, int boundary_count) {
  std::vector<std::pair<std::string, double>> c = {
      {"tsse_boundary_mag", r.tsse_boundary.mag_percent},  {"tsse_boundary_ang", r.tsse_boundary.angle_deg},
      {"dsse_boundary_mag", r.dsse_boundary.mag_percent},  {"ctdse_boundary_mag", r.ctdse_boundary.mag_percent},
      {"ctdse_boundary_ang", r.ctdse_boundary.angle_deg},  {"tsse_master_mag", r.tsse_master.mag_percent},
      {"tsse_master_ang", r.tsse_master.angle_deg},        {"ctdse_master_mag", r.ctdse_master.mag_percent},
      {"ctdse_master_ang", r.ctdse_master.angle_deg},      {"dsse_slave_mag", r.dsse_slave.mag_percent},
      {"dsse_slave_relang", r.dsse_slave.angle_deg},       {"ctdse_slave_mag", r.ctdse_slave.mag_percent},
      {"ctdse_slave_ang", r.ctdse_slave.angle_deg},        {"dsse_iterations", r.dsse_iterations},
      {"dsse_max_iterations", static_cast<double>(r.dsse_max_iterations)},
      {"sweeps", static_cast<double>(r.sweeps)},
      {"coordination_converged", r.coordination_converged ? 1.0 : 0.0},
  };
  for (int i = 0; i < boundary_count; ++i) {
    const std::string p = "b" + std::to_string(i) + "_";
    BoundaryTrialStats s;
    if (i < static_cast<int>(r.boundaries.size())) s = r.boundaries[i];
    c.emplace_back(p + "iterations", s.iterations);
    c.emplace_back(p + "converged", s.converged ? 1.0 : 0.0);
    c.emplace_back(p + "dp_before", std::abs(s.before.dp));
    c.emplace_back(p + "dq_before", std::abs(s.before.dq));
    c.emplace_back(p + "dp_after", std::abs(s.after.dp));
    c.emplace_back(p + "dq_after", std::abs(s.after.dq));
  }
  return c;
}

int thread_count(int requested) {
  int n = requested;
  if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("TDSE_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = std::min(n, cap);
  }
  return std::max(n, 1);
}

std::vector<TrialRecord> run_trials(const coordination::CtdseSystem& system,
                                    const coordination::CtdseOptions& options, std::uint64_t seed, int trials,
                                    int threads) {
  std::vector<TrialRecord> records(static_cast<std::size_t>(std::max(trials, 0)));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int t = next++; t < trials; t = next++) {
      const auto trial = static_cast<std::uint64_t>(t);
      try {
        const auto result = system.run(system.noisy_measurements(seed, trial), options);
        records[t] = score_trial(system, result, trial);
      } catch (const std::exception& e) {
        records[t] = TrialRecord{};
        records[t].trial = trial;
        records[t].error = e.what();
      }
    }
  };
  const int n = std::min(thread_count(threads), std::max(trials, 1));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return records;
}

std::vector<Aggregate> aggregate(const std::vector<TrialRecord>& trials, int boundary_count) {
  std::vector<Aggregate> out;
  for (const auto& [name, value] : trial_columns(TrialRecord{}, boundary_count)) out.push_back({name, 0.0, 0.0});
  int ok = 0;
  for (const auto& t : trials) {
    if (!t.ok) continue;
    ++ok;
    const auto cols = trial_columns(t, boundary_count);
    for (std::size_t c = 0; c < cols.size(); ++c) {
      out[c].mean += cols[c].second;
      out[c].pooled += cols[c].second * cols[c].second;
    }
  }
  for (auto& a : out) {
    a.mean = ok > 0 ? a.mean / ok : kNaN;
    a.pooled = ok > 0 ? std::sqrt(a.pooled / ok) : kNaN;
  }
  return out;
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
  if (!std::filesystem::exists(config.case_path)) {
    throw InputError(Code::invalid_config, config.case_path.string(), "case file does not exist");
  }
  const auto loaded = load_integrated(config.case_path, {config.strict, nullptr});
  const coordination::CtdseSystem system(loaded.integrated, plans_or_default(loaded), config.noise);
  ExperimentReport report;
  report.case_name = config.case_path.filename().string();
  report.seed = config.seed;
  report.boundary_count = static_cast<int>(loaded.integrated.feeders.size());
  report.trials = run_trials(system, config.options, config.seed, config.trials);
  report.aggregates = aggregate(report.trials, report.boundary_count);
  for (const auto& t : report.trials) report.failures += t.ok ? 0 : 1;
  return report;
}

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.11e", value);
  return buf;
}

void emit_reports(const ExperimentReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw InputError(Code::invalid_config, dir.string(), "cannot create output directory: " + ec.message());

  const auto header = trial_columns(TrialRecord{}, report.boundary_count);
  std::ostringstream trials;
  trials << "trial,ok";
  for (const auto& [name, v] : header) trials << ',' << name;
  trials << ",error\n";
  std::ostringstream traj;
  traj << "trial,boundary,iteration,dP,dQ,J\n";
  std::ostringstream timing;
  timing << "trial,local_ms,coordination_ms,update_ms\n";
  for (const auto& t : report.trials) {
    trials << t.trial << ',' << (t.ok ? 1 : 0);
    for (const auto& [name, v] : trial_columns(t, report.boundary_count)) trials << ',' << format_number(v);
    trials << ',' << csv_escape(t.error) << '\n';
    for (std::size_t b = 0; b < t.boundaries.size(); ++b) {
      for (const auto& p : t.boundaries[b].trajectory) {
        traj << t.trial << ',' << b << ',' << p.iteration << ',' << format_number(p.mismatch.dp) << ','
             << format_number(p.mismatch.dq) << ',' << format_number(p.objective) << '\n';
      }
    }
    timing << t.trial << ',' << format_number(t.times.local_ms) << ',' << format_number(t.times.coordination_ms)
           << ',' << format_number(t.times.update_ms) << '\n';
  }

  auto mean_of = [&](const std::string& name) {
    for (const auto& a : report.aggregates) {
      if (a.name == name) return a.mean;
    }
    return kNaN;
  };
  std::ostringstream groups;
  groups << "group,method,mag_rmse_percent,angle_rmse_deg,angle_reference\n";
  auto group_row = [&](const char* group, const char* method, const std::string& mag, const std::string& ang,
                       const char* reference) {
    groups << group << ',' << method << ',' << format_number(mean_of(mag)) << ','
           << format_number(ang.empty() ? kNaN : mean_of(ang)) << ',' << reference << '\n';
  };
  group_row("boundary", "tsse", "tsse_boundary_mag", "tsse_boundary_ang", "global");
  group_row("boundary", "dsse", "dsse_boundary_mag", "", "none");
  group_row("boundary", "ctdse", "ctdse_boundary_mag", "ctdse_boundary_ang", "global");
  group_row("master", "tsse", "tsse_master_mag", "tsse_master_ang", "global");
  group_row("master", "ctdse", "ctdse_master_mag", "ctdse_master_ang", "global");
  group_row("slave", "dsse", "dsse_slave_mag", "dsse_slave_relang", "substation");
  group_row("slave", "ctdse", "ctdse_slave_mag", "ctdse_slave_ang", "global");

  nlohmann::ordered_json summary;
  summary["case"] = report.case_name;
  summary["seed"] = report.seed;
  summary["trials"] = report.trials.size();
  summary["failures"] = report.failures;
  nlohmann::ordered_json aggregates = nlohmann::ordered_json::object();
  for (const auto& a : report.aggregates) {
    nlohmann::ordered_json entry;
    entry["mean"] = std::isfinite(a.mean) ? nlohmann::ordered_json(a.mean) : nlohmann::ordered_json(nullptr);
    entry["pooled"] = std::isfinite(a.pooled) ? nlohmann::ordered_json(a.pooled) : nlohmann::ordered_json(nullptr);
    aggregates[a.name] = std::move(entry);
  }
  summary["aggregates"] = std::move(aggregates);
  nlohmann::ordered_json failed = nlohmann::ordered_json::array();
  for (const auto& t : report.trials) {
    if (!t.ok) failed.push_back({{"trial", t.trial}, {"error", t.error}});
  }
  summary["failed_trials"] = std::move(failed);

  write_file(dir / "summary.json", summary.dump(2) + "\n");
  write_file(dir / "trials.csv", trials.str());
  write_file(dir / "mismatch_traj.csv", traj.str());
  write_file(dir / "rmse_by_group.csv", groups.str());
  write_file(dir / "timing.csv", timing.str());
}

}  // namespace ctdse::harness
