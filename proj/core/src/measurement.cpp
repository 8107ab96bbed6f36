#include "ctdse/measurement.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "ctdse/errors.hpp"

namespace ctdse {

namespace {

struct TypeName {
  MeasurementType type;
  const char* name;
};

constexpr TypeName kTypeNames[] = {
    {MeasurementType::pmu_voltage, "pmu_voltage"},
    {MeasurementType::pmu_current, "pmu_current"},
    {MeasurementType::pmu_injection_current, "pmu_injection_current"},
    {MeasurementType::scada_vmag, "scada_vmag"},
    {MeasurementType::scada_flow_p, "scada_flow_p"},
    {MeasurementType::scada_flow_q, "scada_flow_q"},
    {MeasurementType::scada_inj_p, "scada_inj_p"},
    {MeasurementType::scada_inj_q, "scada_inj_q"},
    {MeasurementType::pseudo_inj_p, "pseudo_inj_p"},
    {MeasurementType::pseudo_inj_q, "pseudo_inj_q"},
};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Complex branch_current(const NetworkCase& network, int branch, BranchEnd end, const BusVoltages& state) {
  const auto& br = network.branches.at(branch);
  const BranchStamp s = branch_stamp(br);
  const Complex vf = state.phasor(br.from);
  const Complex vt = state.phasor(br.to);
  return end == BranchEnd::from ? s.ff * vf + s.ft * vt : s.tf * vf + s.tt * vt;
}

Complex injection_current(const AdmittanceMatrix& adm, int bus, const BusVoltages& state) {
  Complex sum(0.0, 0.0);
  for (int j = 0; j < adm.size(); ++j) {
    if (adm.Y(bus, j) != Complex(0.0, 0.0)) sum += adm.Y(bus, j) * state.phasor(j);
  }
  return sum;
}

}  // namespace

const char* to_string(MeasurementType type) {
  for (const auto& tn : kTypeNames) {
    if (tn.type == type) return tn.name;
  }
  return "?";
}

MeasurementType measurement_type_from_string(const std::string& name) {
  for (const auto& tn : kTypeNames) {
    if (name == tn.name) return tn.type;
  }
  throw InputError(InputError::Code::invalid_plan, "", "unknown measurement type '" + name + "'");
}

bool MeasurementKind::is_phasor() const {
  return type == MeasurementType::pmu_voltage || type == MeasurementType::pmu_current ||
         type == MeasurementType::pmu_injection_current;
}

bool MeasurementKind::on_branch() const {
  return type == MeasurementType::pmu_current || type == MeasurementType::scada_flow_p ||
         type == MeasurementType::scada_flow_q;
}

std::string Subsystem::tag() const {
  switch (kind) {
    case Kind::transmission:
      return "transmission";
    case Kind::feeder:
      return "feeder" + std::to_string(index);
    case Kind::boundary:
      return "boundary" + std::to_string(index);
  }
  return "?";
}

int MeasurementSet::rows() const {
  int n = 0;
  for (const auto& r : records) n += r.kind.rows();
  return n;
}

Eigen::VectorXd MeasurementSet::values() const {
  Eigen::VectorXd z(rows());
  int row = 0;
  for (const auto& r : records) {
    z(row++) = r.value;
    if (r.kind.is_phasor()) z(row++) = r.value_im;
  }
  return z;
}

Eigen::VectorXd MeasurementSet::sigmas() const {
  Eigen::VectorXd s(rows());
  int row = 0;
  for (const auto& r : records) {
    s(row++) = r.sigma;
    if (r.kind.is_phasor()) s(row++) = r.sigma_im;
  }
  return s;
}

void NoiseSpec::validate() const {
  if (!(max_err_pmu_mag > 0.0) || !(max_err_pmu_ang > 0.0) || !(max_err_scada > 0.0) || !(max_err_pseudo > 0.0)) {
    throw InputError(InputError::Code::invalid_config, "noise", "maximum errors must be positive");
  }
  if (!(sigma_floor > 0.0) || !(pseudo_sigma_floor > 0.0)) {
    throw InputError(InputError::Code::invalid_config, "noise", "sigma floors must be positive");
  }
}

Complex evaluate_measurement(const MeasurementKind& kind, const NetworkCase& network, const AdmittanceMatrix& adm,
                             const BusVoltages& state) {
  switch (kind.type) {
    case MeasurementType::pmu_voltage:
      return state.phasor(kind.element);
    case MeasurementType::pmu_current:
      return branch_current(network, kind.element, kind.end, state);
    case MeasurementType::pmu_injection_current:
      return injection_current(adm, kind.element, state);
    case MeasurementType::scada_vmag:
      return {state.v(kind.element), 0.0};
    case MeasurementType::scada_flow_p:
    case MeasurementType::scada_flow_q: {
      const auto& br = network.branches.at(kind.element);
      const int bus = kind.end == BranchEnd::from ? br.from : br.to;
      const Complex s = state.phasor(bus) * std::conj(branch_current(network, kind.element, kind.end, state));
      return {kind.type == MeasurementType::scada_flow_p ? s.real() : s.imag(), 0.0};
    }
    case MeasurementType::scada_inj_p:
      return {network.buses.at(kind.element).scheduled_injection().real(), 0.0};
    case MeasurementType::scada_inj_q:
      return {network.buses.at(kind.element).scheduled_injection().imag(), 0.0};
    case MeasurementType::pseudo_inj_p:
    case MeasurementType::pseudo_inj_q: {
      const Complex s = state.phasor(kind.element) * std::conj(injection_current(adm, kind.element, state));
      return {kind.type == MeasurementType::pseudo_inj_p ? s.real() : s.imag(), 0.0};
    }
  }
  return {};
}

void check_plan(const PlacementPlan& plan, const NetworkCase& network) {
  for (std::size_t i = 0; i < plan.entries.size(); ++i) {
    const auto& kind = plan.entries[i];
    const int limit = kind.on_branch() ? static_cast<int>(network.branches.size()) : network.size();
    if (kind.element < 0 || kind.element >= limit) {
      throw InputError(kind.on_branch() ? InputError::Code::unknown_branch : InputError::Code::unknown_bus,
                       network.name + "/placement/" + std::to_string(i),
                       std::string(to_string(kind.type)) + " references unknown element " + std::to_string(kind.element));
    }
  }
}

void assign_sigmas(MeasurementRecord& record, const NoiseSpec& noise) {
  const auto& kind = record.kind;
  if (kind.is_phasor()) {
    const double mag = std::hypot(record.value, record.value_im);
    const double ang = std::atan2(record.value_im, record.value);
    const double sm = std::max(noise.max_err_pmu_mag / 3.0 * mag, noise.sigma_floor);
    const double sa = noise.max_err_pmu_ang / 3.0;
    // First-order propagation of the polar errors; cross terms are dropped.
    const double c = std::cos(ang);
    const double s = std::sin(ang);
    record.sigma = std::sqrt(c * c * sm * sm + mag * mag * s * s * sa * sa);
    record.sigma_im = std::sqrt(s * s * sm * sm + mag * mag * c * c * sa * sa);
    if (mag == 0.0) {
      record.sigma = sm;
      record.sigma_im = sm;
    }
    return;
  }
  const bool pseudo = kind.type == MeasurementType::pseudo_inj_p || kind.type == MeasurementType::pseudo_inj_q;
  const double rel = pseudo ? noise.max_err_pseudo : noise.max_err_scada;
  const double floor = pseudo ? noise.pseudo_sigma_floor : noise.sigma_floor;
  record.sigma = std::max(rel / 3.0 * std::abs(record.value), floor);
  record.sigma_im = 0.0;
}

MeasurementSet true_measurements(const BusVoltages& truth, const PlacementPlan& plan, const NetworkCase& network,
                                 const NoiseSpec& noise, Subsystem owner) {
  check_plan(plan, network);
  const AdmittanceMatrix adm = build_admittance(network);
  MeasurementSet set;
  set.owner = owner;
  set.records.reserve(plan.entries.size());
  for (const auto& kind : plan.entries) {
    MeasurementRecord rec;
    rec.kind = kind;
    const Complex value = evaluate_measurement(kind, network, adm, truth);
    rec.value = value.real();
    rec.value_im = kind.is_phasor() ? value.imag() : 0.0;
    assign_sigmas(rec, noise);
    set.records.push_back(rec);
  }
  return set;
}

MeasurementSet add_noise(const MeasurementSet& set, const NoiseSpec& noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  MeasurementSet out = set;
  for (auto& rec : out.records) {
    // Sigmas follow the same rule as the sampled noise so that W = R^-1 holds.
    assign_sigmas(rec, noise);
    const double n1 = gauss(rng);
    const double n2 = gauss(rng);
    if (rec.kind.is_phasor()) {
      const double mag = std::hypot(rec.value, rec.value_im);
      const double ang = std::atan2(rec.value_im, rec.value);
      const double sm = std::max(noise.max_err_pmu_mag / 3.0 * mag, noise.sigma_floor);
      const double sa = noise.max_err_pmu_ang / 3.0;
      if (sm == 0.0 && sa == 0.0) continue;
      const Complex noisy = std::polar(mag + sm * n1, ang + sa * n2);
      rec.value = noisy.real();
      rec.value_im = noisy.imag();
    } else {
      rec.value += rec.sigma * n1;
    }
  }
  return out;
}

Eigen::VectorXd weights(const MeasurementSet& set) {
  Eigen::VectorXd s = set.sigmas();
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (!(s(i) > 0.0)) {
      throw InputError(InputError::Code::invalid_sigma, set.owner.tag() + "/row/" + std::to_string(i),
                       "measurement standard deviation must be positive");
    }
  }
  return s.array().square().inverse().matrix();
}

std::uint64_t stream_seed(std::uint64_t master_seed, std::uint64_t trial, const Subsystem& owner) {
  std::uint64_t h = splitmix64(master_seed);
  h = splitmix64(h ^ trial);
  h = splitmix64(h ^ (static_cast<std::uint64_t>(owner.kind) + 1));
  h = splitmix64(h ^ static_cast<std::uint64_t>(owner.index));
  return h;
}

ExperimentPlans default_plans(const IntegratedCase& integrated) {
  ExperimentPlans plans;
  const auto& tx = integrated.transmission;
  const int n = tx.size();

  // Greedy dominating set: a PMU bus with currents on all incident branches
  // observes itself and every neighbour.
  std::vector<bool> covered(n, false);
  std::vector<int> chosen;
  int remaining = n;
  while (remaining > 0) {
    int best = -1;
    int best_gain = -1;
    for (int b = 0; b < n; ++b) {
      if (std::find(chosen.begin(), chosen.end(), b) != chosen.end()) continue;
      int gain = covered[b] ? 0 : 1;
      for (int nb : tx.neighbors(b)) gain += covered[nb] ? 0 : 1;
      if (gain > best_gain) {
        best_gain = gain;
        best = b;
      }
    }
    chosen.push_back(best);
    if (!covered[best]) {
      covered[best] = true;
      --remaining;
    }
    for (int nb : tx.neighbors(best)) {
      if (!covered[nb]) {
        covered[nb] = true;
        --remaining;
      }
    }
  }
  std::sort(chosen.begin(), chosen.end());
  for (int b : chosen) plans.transmission.entries.push_back({MeasurementType::pmu_voltage, b, BranchEnd::from});
  for (int b : chosen) {
    for (std::size_t l = 0; l < tx.branches.size(); ++l) {
      const auto& br = tx.branches[l];
      if (br.from == b) plans.transmission.entries.push_back({MeasurementType::pmu_current, static_cast<int>(l), BranchEnd::from});
      if (br.to == b) plans.transmission.entries.push_back({MeasurementType::pmu_current, static_cast<int>(l), BranchEnd::to});
    }
  }

  for (std::size_t f = 0; f < integrated.feeders.size(); ++f) {
    const auto& feeder = integrated.feeders[f];
    PlacementPlan plan;
    const int sub = feeder.slack_bus;
    plan.entries.push_back({MeasurementType::scada_vmag, sub, BranchEnd::from});
    for (std::size_t l = 0; l < feeder.branches.size(); ++l) {
      const auto& br = feeder.branches[l];
      if (br.from == sub || br.to == sub) {
        const BranchEnd end = br.from == sub ? BranchEnd::from : BranchEnd::to;
        plan.entries.push_back({MeasurementType::scada_flow_p, static_cast<int>(l), end});
        plan.entries.push_back({MeasurementType::scada_flow_q, static_cast<int>(l), end});
      }
    }
    for (int b = 0; b < feeder.size(); ++b) {
      if (b == sub) continue;
      plan.entries.push_back({MeasurementType::pseudo_inj_p, b, BranchEnd::from});
      plan.entries.push_back({MeasurementType::pseudo_inj_q, b, BranchEnd::from});
    }
    plans.feeders.push_back(std::move(plan));

    PlacementPlan boundary;
    const int k = integrated.link_of(static_cast<int>(f)).transmission_bus;
    boundary.entries.push_back({MeasurementType::scada_inj_p, k, BranchEnd::from});
    boundary.entries.push_back({MeasurementType::scada_inj_q, k, BranchEnd::from});
    plans.boundary.push_back(std::move(boundary));
  }
  return plans;
}

}  // namespace ctdse
