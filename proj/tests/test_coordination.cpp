#include <doctest.h>

#include <cmath>
#include <random>

#include "ctdse/coordination.hpp"
#include "ctdse/errors.hpp"
#include "support.hpp"

using namespace ctdse;
using namespace ctdse::coordination;

namespace {

CtdseSystem make_system(const LoadedIntegratedCase& loaded) {
  return CtdseSystem(loaded.integrated, plans_or_default(loaded), NoiseSpec{});
}

Eigen::VectorXd true_y(const CtdseSystem& system, int i) {
  return boundary_state(tsse::to_rectangular(system.truth().transmission.voltages), system.partition().boundaries[i]);
}

/// Power drawn from the master system at boundary i in the power-flow truth.
HeadPower true_master_flow(const CtdseSystem& system, int i) {
  const auto& bus = system.integrated().transmission.buses[system.partition().boundaries[i].boundary_bus];
  const auto& head = system.truth().heads[i];
  return {head.p + bus.load_p - bus.gen_p, head.q + bus.load_q - bus.gen_q};
}

Eigen::VectorXd random_y(int m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> v(0.9, 1.1), a(-0.6, 0.6);
  Eigen::VectorXd y(2 * m);
  for (int j = 0; j < m; ++j) {
    y(j) = v(rng);
    y(m + j) = a(rng);
  }
  return y;
}

/// A 4-bus chain whose boundary bus has two transmission neighbours.
LoadedIntegratedCase chain_case() {
  IntegratedCase ic;
  ic.transmission.name = "chain";
  ic.transmission.buses = {test::bus(0), test::bus(1, 0.1, 0.02), test::bus(2, 0.3, 0.1), test::bus(3, 0.2, 0.05)};
  ic.transmission.branches = {test::branch(0, 1, 0.01, 0.08, 0.02), test::branch(1, 2, 0.012, 0.09, 0.02),
                              test::branch(2, 3, 0.01, 0.07, 0.01)};
  NetworkCase f;
  f.name = "chain-f";
  f.buses = {test::bus(0), test::bus(1, 0.1, 0.04), test::bus(2, 0.08, 0.03)};
  f.branches = {test::branch(0, 1, 0.02, 0.05), test::branch(1, 2, 0.03, 0.06)};
  ic.feeders.push_back(f);
  ic.boundary_links.push_back({1, 0, 0});
  LoadedIntegratedCase out;
  out.integrated = ic;
  return out;
}

/// The desk case with its two feeders listed in reverse order.
std::pair<LoadedIntegratedCase, ExperimentPlans> reversed_desk(const LoadedIntegratedCase& desk) {
  LoadedIntegratedCase rev = desk;
  auto& ic = rev.integrated;
  std::swap(ic.feeders[0], ic.feeders[1]);
  for (auto& link : ic.boundary_links) link.feeder = 1 - link.feeder;
  ExperimentPlans plans = plans_or_default(desk);
  std::swap(plans.feeders[0], plans.feeders[1]);
  std::swap(plans.boundary[0], plans.boundary[1]);
  rev.plans = plans;
  return {rev, plans};
}

}  // namespace

TEST_CASE("zero-noise auxiliary measurements are consistent with the truth") {
  for (const auto& loaded : {test::load_desk(), test::load_t30()}) {
    const CtdseSystem system = make_system(loaded);
    const CtdseResult res = system.run(system.true_measurements());
    for (std::size_t i = 0; i < system.partition().boundaries.size(); ++i) {
      const auto& bsys = system.partition().boundaries[i];
      const Eigen::VectorXd y = true_y(system, static_cast<int>(i));
      const Eigen::VectorXd r = res.boundary_measurements[i].z - coordination_h(y, bsys, system.transmission_admittance());
      CHECK(r.lpNorm<Eigen::Infinity>() < 1e-8);
    }
  }
}

TEST_CASE("auxiliary measurement layout and weights") {
  const CtdseSystem system = make_system(chain_case());
  const auto& bsys = system.partition().boundaries[0];
  REQUIRE(bsys.size() == 3);
  const auto& tx = system.integrated().transmission;
  const auto meas = system.true_measurements();
  const auto tsse_model = tsse::build_tsse_model(tx, system.transmission_admittance(), meas.transmission);
  wls::WlsResult t = tsse::solve_tsse(tsse_model, meas.transmission.values());
  t.covariance = 1e-6 * Eigen::MatrixXd::Identity(t.x.size(), t.x.size());
  const dsse::DsseModel dm(system.integrated().feeders[0], meas.feeders[0]);
  const auto d = dsse::solve_dsse(dm, meas.feeders[0].values());
  const auto bm = assemble_boundary(t, d, dm, meas.boundary[0], bsys, tx, system.noise());
  CHECK(bm.z.size() == 9);
  for (int j = 0; j < 6; ++j) CHECK(bm.weights(j) == doctest::Approx(1e6).epsilon(1e-12));
  CHECK(bm.weights(6) == doctest::Approx(1.0 / d.covariance(0, 0)).epsilon(1e-12));
  CHECK_FALSE(bm.schedule_fallback);

  const auto fallback = assemble_boundary(t, d, dm, MeasurementSet{}, bsys, tx, system.noise());
  CHECK(fallback.schedule_fallback);
  CHECK(fallback.boundary.p == doctest::Approx(tx.buses[1].load_p - tx.buses[1].gen_p));
}

TEST_CASE("boundary model at a flat state") {
  const CtdseSystem system = make_system(chain_case());
  const auto& bsys = system.partition().boundaries[0];
  const auto& adm = system.transmission_admittance();
  const int m = bsys.size();
  Eigen::VectorXd y = Eigen::VectorXd::Zero(2 * m);
  y.head(m).setOnes();
  const Eigen::VectorXd h = coordination_h(y, bsys, adm);
  double sum_g = 0.0, sum_b = 0.0;
  for (int n : bsys.nodes) {
    sum_g += adm.Y(bsys.boundary_bus, n).real();
    sum_b += adm.Y(bsys.boundary_bus, n).imag();
  }
  for (int j = 0; j < m; ++j) {
    CHECK(h(j) == 1.0);
    CHECK(h(m + j) == 0.0);
  }
  CHECK(h(2 * m) == 1.0);
  // Flow from the master system is minus the transmission injection at k.
  CHECK(h(2 * m + 1) == doctest::Approx(-sum_g).epsilon(1e-14));
  CHECK(h(2 * m + 2) == doctest::Approx(sum_b).epsilon(1e-14));

  const Eigen::MatrixXd H = coordination_jacobian(y, bsys, adm);
  CHECK(H.topRows(2 * m).isApprox(Eigen::MatrixXd::Identity(2 * m, 2 * m)));
  Eigen::RowVectorXd hs = Eigen::RowVectorXd::Zero(2 * m);
  hs(0) = 1.0;
  CHECK(H.row(2 * m) == hs);
}

TEST_CASE("power rows equal the flow from the master system at the truth") {
  for (const auto& loaded : {test::load_desk(), test::load_t30()}) {
    const CtdseSystem system = make_system(loaded);
    for (int i = 0; i < static_cast<int>(system.partition().boundaries.size()); ++i) {
      const auto& bsys = system.partition().boundaries[i];
      const Eigen::VectorXd h = coordination_h(true_y(system, i), bsys, system.transmission_admittance());
      const HeadPower flow = true_master_flow(system, i);
      const int m = bsys.size();
      CHECK(std::abs(h(2 * m + 1) - flow.p) < 1e-10);
      CHECK(std::abs(h(2 * m + 2) - flow.q) < 1e-10);
    }
  }
}

TEST_CASE("power rows depend on angle differences only") {
  const CtdseSystem system = make_system(test::load_t30());
  std::mt19937_64 rng(4);
  for (const auto& bsys : system.partition().boundaries) {
    const int m = bsys.size();
    const Eigen::VectorXd y = random_y(m, rng);
    Eigen::VectorXd rotated = y;
    rotated.tail(m).array() += 0.8;
    const Eigen::VectorXd a = coordination_h(y, bsys, system.transmission_admittance());
    const Eigen::VectorXd b = coordination_h(rotated, bsys, system.transmission_admittance());
    CHECK((a.head(2 * m) - b.head(2 * m)).norm() > 1e-3);
    CHECK(std::abs(a(2 * m + 1) - b(2 * m + 1)) < 1e-13);
    CHECK(std::abs(a(2 * m + 2) - b(2 * m + 2)) < 1e-13);
  }
}

TEST_CASE("boundary Jacobian matches finite differences at random states") {
  std::mt19937_64 rng(5);
  for (const auto& loaded : {test::load_desk(), test::load_t30(), chain_case()}) {
    const CtdseSystem system = make_system(loaded);
    for (const auto& bsys : system.partition().boundaries) {
      for (int trial = 0; trial < 10; ++trial) {
        const Eigen::VectorXd y = random_y(bsys.size(), rng);
        const auto fd = test::fd_jacobian(
            [&](const Eigen::VectorXd& p) { return coordination_h(p, bsys, system.transmission_admittance()); }, y);
        CHECK(test::max_relative_error(coordination_jacobian(y, bsys, system.transmission_admittance()), fd) < 1e-5);
      }
    }
  }
}

TEST_CASE("mismatch vanishes at the truth") {
  for (const auto& loaded : {test::load_desk(), test::load_t30()}) {
    const CtdseSystem system = make_system(loaded);
    for (int i = 0; i < static_cast<int>(system.partition().boundaries.size()); ++i) {
      const auto& bsys = system.partition().boundaries[i];
      const int m = bsys.size();
      BoundaryMeasurements bm;
      bm.z = coordination_h(true_y(system, i), bsys, system.transmission_admittance());
      const HeadPower flow = true_master_flow(system, i);
      bm.z(2 * m + 1) = flow.p;
      bm.z(2 * m + 2) = flow.q;
      const Mismatch mm = boundary_mismatch(true_y(system, i), bm, bsys, system.transmission_admittance());
      CHECK(std::abs(mm.dp) < 1e-9);
      CHECK(std::abs(mm.dq) < 1e-9);
    }
  }
}

TEST_CASE("zero-noise coordination converges immediately") {
  const CtdseSystem system = make_system(test::load_desk());
  const CtdseResult res = system.run(system.true_measurements());
  for (const auto& b : res.coordination.boundaries) {
    CHECK(b.converged);
    CHECK(b.result.iterations <= 2);
    CHECK(std::abs(b.after.dp) < 1e-8);
    CHECK(std::abs(b.after.dq) < 1e-8);
  }
}

TEST_CASE("noisy desk trials: iterations and objective trajectories") {
  const CtdseSystem system = make_system(test::load_desk());
  const int trials = 200;
  double iterations = 0.0;
  int count = 0, monotone = 0;
  for (int t = 0; t < trials; ++t) {
    const CtdseResult res = system.run(system.noisy_measurements(7, t));
    for (const auto& b : res.coordination.boundaries) {
      REQUIRE(b.converged);
      iterations += b.result.iterations;
      ++count;
      bool ok = true;
      for (std::size_t s = 1; s < b.trajectory.size(); ++s) {
        ok = ok && b.trajectory[s].objective <= b.trajectory[s - 1].objective * (1.0 + 1e-9) + 1e-12;
      }
      monotone += ok;
      CHECK(b.trajectory.front().iteration == 0);
      CHECK(static_cast<int>(b.trajectory.size()) == b.result.iterations + 1);
    }
  }
  CHECK(iterations / count <= 10.0);
  CHECK(monotone >= 0.95 * count);
}

TEST_CASE("scaling the boundary weights leaves the estimate unchanged") {
  const CtdseSystem system = make_system(test::load_t30());
  const CtdseResult res = system.run(system.noisy_measurements(3, 0), {.update = false});
  for (std::size_t i = 0; i < res.boundary_measurements.size(); ++i) {
    const auto& bsys = system.partition().boundaries[i];
    BoundaryMeasurements scaled = res.boundary_measurements[i];
    scaled.weights *= 1234.5;
    const auto& base = res.coordination.boundaries[i];
    const auto a = solve_boundary(res.boundary_measurements[i], bsys, system.transmission_admittance(), base.y0,
                                  {1e-12, 50});
    const auto b = solve_boundary(scaled, bsys, system.transmission_admittance(), base.y0, {1e-12, 50});
    CHECK((a.result.x - b.result.x).lpNorm<Eigen::Infinity>() < 1e-10);
  }
}

TEST_CASE("solve_boundary captures solver failures") {
  const CtdseSystem system = make_system(test::load_desk());
  const CtdseResult res = system.run(system.noisy_measurements(3, 0));
  const auto& bsys = system.partition().boundaries[0];
  const auto capped = solve_boundary(res.boundary_measurements[0], bsys, system.transmission_admittance(),
                                     res.coordination.boundaries[0].y0, {1e-30, 1});
  CHECK_FALSE(capped.converged);
  CHECK_FALSE(capped.failure.empty());
}

TEST_CASE("zero-noise pipeline reproduces the truth in the global reference") {
  for (const auto& loaded : {test::load_desk(), test::load_t30()}) {
    const CtdseSystem system = make_system(loaded);
    const CtdseResult res = system.run(system.true_measurements());
    CHECK(res.coordination.converged);
    const auto& truth = system.truth();
    CHECK((res.transmission.v - truth.transmission.voltages.v).lpNorm<Eigen::Infinity>() < 1e-6);
    CHECK((res.transmission.theta - truth.transmission.voltages.theta).lpNorm<Eigen::Infinity>() < 1e-6);
    for (std::size_t i = 0; i < res.feeders.size(); ++i) {
      CHECK(res.global_angles[i]);
      CHECK((res.feeders[i].v - truth.feeders[i].voltages.v).lpNorm<Eigen::Infinity>() < 1e-6);
      CHECK((res.feeders[i].theta - truth.feeders[i].voltages.theta).lpNorm<Eigen::Infinity>() < 1e-6);
    }
  }
}

TEST_CASE("feeder angles are shifted by the coordinated boundary angle") {
  const CtdseSystem system = make_system(test::load_desk());
  const CtdseResult res = system.run(system.noisy_measurements(11, 0));
  for (std::size_t i = 0; i < res.feeders.size(); ++i) {
    const dsse::DsseModel dm(system.integrated().feeders[i], system.true_measurements().feeders[i]);
    const BusVoltages relative = dm.voltages(res.refined.dsse[i].x);
    const int m = system.partition().boundaries[i].size();
    const double alpha_k = res.coordination.boundaries[i].result.x(m);
    for (int b = 0; b < relative.size(); ++b) CHECK(res.feeders[i].theta(b) == relative.theta(b) + alpha_k);
  }
}

TEST_CASE("refined boundary magnitude stays within the local envelope") {
  const CtdseSystem system = make_system(test::load_desk());
  const int trials = 200;
  int inside = 0, total = 0;
  for (int t = 0; t < trials; ++t) {
    const CtdseResult res = system.run(system.noisy_measurements(13, t));
    const int n = system.integrated().transmission.size();
    for (std::size_t i = 0; i < res.feeders.size(); ++i) {
      const int k = system.partition().boundaries[i].boundary_bus;
      const int sub = system.integrated().feeders[i].slack_bus;
      const double vt = std::hypot(res.local.tsse.x(k), res.local.tsse.x(n + k));
      const double st = std::sqrt(res.local.tsse.covariance(k, k) + res.local.tsse.covariance(n + k, n + k));
      const double vd = res.local.dsse[i].x(sub);
      const double sd = std::sqrt(res.local.dsse[i].covariance(sub, sub));
      const double refined = res.transmission.v(k);
      const bool between = refined >= std::min(vt, vd) - 1e-12 && refined <= std::max(vt, vd) + 1e-12;
      const bool near = std::abs(refined - vt) <= st || std::abs(refined - vd) <= sd;
      inside += between || near;
      ++total;
    }
  }
  CHECK(inside >= 0.95 * total);
}

TEST_CASE("coordination disabled returns the local estimates") {
  const CtdseSystem system = make_system(test::load_desk());
  const auto meas = system.noisy_measurements(17, 0);
  const CtdseResult res = system.run(meas, {.coordination = false});
  CHECK(res.coordination.boundaries.empty());
  CHECK(res.refined.tsse.x == res.local.tsse.x);
  CHECK(res.transmission.v == tsse::to_polar(res.local.tsse.x).v);
  for (std::size_t i = 0; i < res.feeders.size(); ++i) {
    CHECK_FALSE(res.global_angles[i]);
    CHECK(res.refined.dsse[i].x == res.local.dsse[i].x);
  }
  const CtdseResult full = system.run(meas);
  CHECK(full.local.tsse.x == res.local.tsse.x);
}

TEST_CASE("boundary processing order does not matter for disjoint neighbourhoods") {
  const auto desk = test::load_desk();
  const CtdseSystem forward = make_system(desk);
  REQUIRE(forward.partition().boundaries_disjoint());
  auto [rev_loaded, rev_plans] = reversed_desk(desk);
  const CtdseSystem backward(rev_loaded.integrated, rev_plans, NoiseSpec{});
  for (int t = 0; t < 5; ++t) {
    const auto meas = forward.noisy_measurements(21, t);
    TrialMeasurements swapped = meas;
    std::swap(swapped.feeders[0], swapped.feeders[1]);
    std::swap(swapped.boundary[0], swapped.boundary[1]);
    const CtdseResult a = forward.run(meas);
    const CtdseResult b = backward.run(swapped);
    CHECK((a.transmission.v - b.transmission.v).lpNorm<Eigen::Infinity>() < 1e-12);
    CHECK((a.transmission.theta - b.transmission.theta).lpNorm<Eigen::Infinity>() < 1e-12);
    for (int i = 0; i < 2; ++i) {
      CHECK((a.feeders[i].v - b.feeders[1 - i].v).lpNorm<Eigen::Infinity>() < 1e-12);
      CHECK((a.feeders[i].theta - b.feeders[1 - i].theta).lpNorm<Eigen::Infinity>() < 1e-12);
      CHECK((a.coordination.boundaries[i].result.x - b.coordination.boundaries[1 - i].result.x)
                .lpNorm<Eigen::Infinity>() < 1e-12);
    }
  }
}

TEST_CASE("overlapping neighbourhoods are coordinated by repeated sweeps") {
  const CtdseSystem system = make_system(test::load_t30());
  REQUIRE_FALSE(system.partition().boundaries_disjoint());
  const CtdseResult res = system.run(system.noisy_measurements(5, 0));
  CHECK(res.coordination.converged);
  CHECK(res.coordination.sweeps >= 2);
  CHECK(res.coordination.sweeps <= CtdseOptions{}.max_sweeps);
}

TEST_CASE("run_ctdse executes all three phases") {
  const auto desk = test::load_desk();
  const CtdseResult res = run_ctdse(desk.integrated, plans_or_default(desk), NoiseSpec{}, 42);
  REQUIRE(res.coordination.boundaries.size() == 2);
  for (const auto& b : res.coordination.boundaries) {
    CHECK(b.converged);
    CHECK(b.trajectory.size() >= 2);
  }
  CHECK(res.refined.tsse.x != res.local.tsse.x);
  CHECK(res.times.local_ms >= 0.0);
  CHECK(res.times.coordination_ms >= 0.0);
  CHECK(res.times.update_ms >= 0.0);
}

TEST_CASE("errors carry the phase name") {
  const auto desk = test::load_desk();
  const CtdseSystem system = make_system(desk);
  auto meas = system.true_measurements();
  meas.transmission.records.resize(1);
  try {
    system.run(meas);
    FAIL("expected an unobservable transmission model");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).rfind("local phase", 0) == 0);
  }
}
