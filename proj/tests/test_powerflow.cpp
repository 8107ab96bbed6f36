#include <doctest.h>

#include <cmath>
#include <queue>
#include <random>

#include "ctdse/case_io.hpp"
#include "ctdse/errors.hpp"
#include "ctdse/powerflow.hpp"
#include "support.hpp"

using namespace ctdse;

namespace {

/// Real power losses summed over every branch of `network`.
double branch_losses(const NetworkCase& network, const BusVoltages& v) {
  double losses = 0.0;
  for (const auto& br : network.branches) {
    const BranchStamp s = branch_stamp(br);
    const Complex vf = v.phasor(br.from);
    const Complex vt = v.phasor(br.to);
    const Complex i_from = s.ff * vf + s.ft * vt;
    const Complex i_to = s.tf * vf + s.tt * vt;
    losses += (vf * std::conj(i_from) + vt * std::conj(i_to)).real();
  }
  return losses;
}

Complex injection(const AdmittanceMatrix& adm, const BusVoltages& v, int bus) {
  Complex i = 0.0;
  for (int j = 0; j < adm.size(); ++j) i += adm.Y(bus, j) * v.phasor(j);
  return v.phasor(bus) * std::conj(i);
}

double max_deviation(const GlobalPowerFlow& a, const GlobalPowerFlow& b) {
  double d = (a.transmission.voltages.v - b.transmission.voltages.v).lpNorm<Eigen::Infinity>();
  d = std::max(d, (a.transmission.voltages.theta - b.transmission.voltages.theta).lpNorm<Eigen::Infinity>());
  for (std::size_t f = 0; f < a.feeders.size(); ++f) {
    d = std::max(d, (a.feeders[f].voltages.v - b.feeders[f].voltages.v).lpNorm<Eigen::Infinity>());
    d = std::max(d, (a.feeders[f].voltages.theta - b.feeders[f].voltages.theta).lpNorm<Eigen::Infinity>());
  }
  return d;
}

/// Checks v(parent) >= v(child) along every branch when all loads are inductive and there is no generation.
bool monotone_if_inductive(const NetworkCase& feeder, const BusVoltages& v, bool& applicable) {
  applicable = true;
  for (const auto& b : feeder.buses) {
    if (b.gen_p != 0.0 || b.gen_q != 0.0 || b.load_q < 0.0 || b.load_p < 0.0 || b.shunt_b != 0.0) applicable = false;
  }
  for (const auto& br : feeder.branches) {
    if (br.b_sh != 0.0) applicable = false;
  }
  if (!applicable) return true;
  std::vector<int> parent(feeder.size(), -1);
  std::vector<bool> seen(feeder.size(), false);
  std::queue<int> q;
  q.push(feeder.slack_bus);
  seen[feeder.slack_bus] = true;
  while (!q.empty()) {
    const int u = q.front();
    q.pop();
    for (int w : feeder.neighbors(u)) {
      if (!seen[w]) {
        seen[w] = true;
        parent[w] = u;
        q.push(w);
      }
    }
  }
  for (int b = 0; b < feeder.size(); ++b) {
    if (parent[b] >= 0 && v.v(b) > v.v(parent[b]) + 1e-12) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("two-bus transmission without load stays flat") {
  const auto sol = solve_transmission_pf(test::two_bus(0.01, 0.1, 0.0, 0.0));
  CHECK(sol.converged);
  CHECK((sol.voltages.v.array() - 1.0).abs().maxCoeff() < 1e-12);
  CHECK(sol.voltages.theta.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("two-bus lossless line matches the closed form") {
  // r = 0, Q = 0: v2 = v1 cos(d) and v1^2 sin(2d) / (2x) = P.
  const double x = 0.1, p = 0.5;
  const auto sol = solve_transmission_pf(test::two_bus(0.0, x, p, 0.0));
  const double delta = std::asin(2.0 * p * x) / 2.0;
  CHECK(sol.mismatch < 1e-10);
  CHECK(std::abs(sol.voltages.theta(1) + delta) < 1e-10);
  CHECK(std::abs(sol.voltages.v(1) - std::cos(delta)) < 1e-10);
  const double v1 = sol.voltages.v(0), v2 = sol.voltages.v(1);
  CHECK(std::abs(v1 * v2 * std::sin(sol.voltages.theta(0) - sol.voltages.theta(1)) / x - p) < 1e-10);
}

TEST_CASE("transmission power flow is deterministic") {
  const auto loaded = test::load_t30();
  const auto a = solve_transmission_pf(loaded.integrated.transmission);
  const auto b = solve_transmission_pf(loaded.integrated.transmission);
  CHECK(a.voltages.v == b.voltages.v);
  CHECK(a.voltages.theta == b.voltages.theta);
  CHECK(a.iterations == b.iterations);
}

TEST_CASE("transmission power flow reports divergence") {
  // Far beyond the maximum transferable power of the line.
  CHECK_THROWS_AS(solve_transmission_pf(test::two_bus(0.0, 0.1, 20.0, 0.0)), NumericalError);
}

TEST_CASE("zero-load feeder carries no flow") {
  NetworkCase f = test::two_bus(0.02, 0.04, 0.0, 0.0);
  f.buses.push_back(test::bus(2));
  f.branches.push_back(test::branch(1, 2, 0.03, 0.05));
  const auto sol = solve_feeder_pf(f, 1.03, 0.2);
  CHECK((sol.voltages.v.array() - 1.03).abs().maxCoeff() < 1e-12);
  CHECK((sol.voltages.theta.array() - 0.2).abs().maxCoeff() < 1e-12);
  CHECK(std::abs(sol.head.p) < 1e-12);
  CHECK(std::abs(sol.head.q) < 1e-12);
}

TEST_CASE("two-bus feeder matches the single-section closed form") {
  const double r = 0.03, x = 0.06, p = 0.4, q = 0.15, v1 = 1.02;
  const auto sol = solve_feeder_pf(test::two_bus(r, x, p, q), v1, 0.0);
  const double a = v1 * v1 - 2.0 * (p * r + q * x);
  const double v2sq = (a + std::sqrt(a * a - 4.0 * (p * p + q * q) * (r * r + x * x))) / 2.0;
  CHECK(sol.converged);
  CHECK(std::abs(sol.voltages.v(1) - std::sqrt(v2sq)) < 1e-10);
  CHECK(std::abs(sol.head.p - (p + r * (p * p + q * q) / v2sq)) < 1e-10);
  CHECK(std::abs(sol.head.q - (q + x * (p * p + q * q) / v2sq)) < 1e-10);
}

TEST_CASE("feeder head power covers the load plus non-negative losses") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const NetworkCase f = test::random_feeder(4 + trial, rng);
    const auto sol = solve_feeder_pf(f, 1.0, 0.0);
    double load = 0.0;
    for (const auto& b : f.buses) load += b.load_p;
    CHECK(sol.head.p >= load - 1e-12);
    CHECK(std::abs(sol.head.p - load - branch_losses(f, sol.voltages)) < 1e-9);
    bool applicable = false;
    CHECK(monotone_if_inductive(f, sol.voltages, applicable));
    CHECK(applicable);
  }
}

TEST_CASE("feeder power flow rejects meshed input") {
  NetworkCase f = test::two_bus(0.01, 0.02, 0.1, 0.0);
  f.branches.push_back(test::branch(0, 1, 0.01, 0.03));
  CHECK_THROWS_AS(solve_feeder_pf(f, 1.0, 0.0), InputError);
}

TEST_CASE("global power flow with idle feeders equals the transmission-only solution") {
  IntegratedCase ic = test::load_desk().integrated;
  for (auto& f : ic.feeders) {
    for (auto& b : f.buses) b.load_p = b.load_q = b.gen_p = b.gen_q = b.shunt_b = 0.0;
    for (auto& br : f.branches) br.b_sh = 0.0;
  }
  const auto global = solve_global_pf(ic);
  const auto alone = solve_transmission_pf(ic.transmission);
  CHECK(global.converged);
  CHECK((global.transmission.voltages.v - alone.voltages.v).lpNorm<Eigen::Infinity>() < 1e-10);
  CHECK((global.transmission.voltages.theta - alone.voltages.theta).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("global power flow balances power at every boundary") {
  for (const auto& loaded : {test::load_desk(), test::load_t30()}) {
    const auto& ic = loaded.integrated;
    const auto sol = solve_global_pf(ic);
    const auto adm = build_admittance(ic.transmission);
    REQUIRE(sol.converged);
    for (std::size_t f = 0; f < ic.feeders.size(); ++f) {
      const int k = ic.link_of(static_cast<int>(f)).transmission_bus;
      const Complex s = injection(adm, sol.transmission.voltages, k);
      const auto& bus = ic.transmission.buses[k];
      // Transmission-side flow into the feeder: local net generation minus the injection at k.
      const double flow_p = bus.gen_p - bus.load_p - s.real();
      const double flow_q = bus.gen_q - bus.load_q - s.imag();
      CHECK(std::abs(sol.heads[f].p - flow_p) < 1e-9);
      CHECK(std::abs(sol.heads[f].q - flow_q) < 1e-9);
      // Substation voltage equals the boundary bus voltage.
      const int sub = ic.feeders[f].slack_bus;
      CHECK(std::abs(sol.feeders[f].voltages.v(sub) - sol.transmission.voltages.v(k)) < 1e-10);
      CHECK(std::abs(sol.feeders[f].voltages.theta(sub) - sol.transmission.voltages.theta(k)) < 1e-10);
    }
  }
}

TEST_CASE("splitting power flow equals monolithic Newton-Raphson") {
  for (const auto& loaded : {test::load_desk(), test::load_t30()}) {
    const auto split = solve_global_pf(loaded.integrated);
    const auto mono = solve_monolithic_pf(loaded.integrated);
    CHECK(split.converged);
    CHECK(mono.converged);
    CHECK(max_deviation(split, mono) < 1e-8);
  }
}

TEST_CASE("global solution conserves power") {
  for (const auto& loaded : {test::load_desk(), test::load_t30()}) {
    const auto& ic = loaded.integrated;
    const auto sol = solve_global_pf(ic);
    const auto adm = build_admittance(ic.transmission);
    const int s = ic.transmission.slack_bus;
    double net_generation = injection(adm, sol.transmission.voltages, s).real();
    for (int b = 0; b < ic.transmission.size(); ++b) {
      if (b != s) net_generation += ic.transmission.buses[b].gen_p - ic.transmission.buses[b].load_p;
    }
    double losses = branch_losses(ic.transmission, sol.transmission.voltages);
    for (std::size_t f = 0; f < ic.feeders.size(); ++f) {
      for (const auto& b : ic.feeders[f].buses) net_generation += b.gen_p - b.load_p;
      losses += branch_losses(ic.feeders[f], sol.feeders[f].voltages);
    }
    CHECK(std::abs(net_generation - losses) < 1e-8);
  }
}

TEST_CASE("voltage drop is monotone on feeders with inductive loads only") {
  const auto loaded = test::load_desk();
  const auto sol = solve_global_pf(loaded.integrated);
  int checked = 0;
  for (std::size_t f = 0; f < loaded.integrated.feeders.size(); ++f) {
    NetworkCase feeder = loaded.integrated.feeders[f];
    for (auto& br : feeder.branches) br.b_sh = 0.0;
    const auto& head = sol.feeders[f].voltages;
    const auto fs = solve_feeder_pf(feeder, head.v(feeder.slack_bus), head.theta(feeder.slack_bus));
    bool applicable = false;
    CHECK(monotone_if_inductive(feeder, fs.voltages, applicable));
    checked += applicable;
  }
  CHECK(checked >= 1);
}

TEST_CASE("merged case folds each substation into its boundary bus") {
  const auto loaded = test::load_desk();
  const MergedCase m = merge(loaded.integrated);
  int buses = loaded.integrated.transmission.size();
  for (const auto& f : loaded.integrated.feeders) buses += f.size() - 1;
  CHECK(m.network.size() == buses);
  for (std::size_t f = 0; f < loaded.integrated.feeders.size(); ++f) {
    const int sub = loaded.integrated.feeders[f].slack_bus;
    CHECK(m.feeder_index[f][sub] == loaded.integrated.link_of(static_cast<int>(f)).transmission_bus);
  }
}

TEST_CASE("power-flow JSON dump lists every network") {
  const auto loaded = test::load_desk();
  const std::string dump = power_flow_to_json(loaded.integrated, solve_global_pf(loaded.integrated));
  CHECK(dump.find("desk-t4") != std::string::npos);
  CHECK(dump.find("desk-f2") != std::string::npos);
}
