#include <doctest.h>

#include <cmath>
#include <random>

#include "ctdse/coordination.hpp"
#include "ctdse/dsse.hpp"
#include "ctdse/errors.hpp"
#include "ctdse/powerflow.hpp"
#include "support.hpp"

using namespace ctdse;

namespace {

/// Every scalar reading the feeder estimator accepts, with unit sigmas.
PlacementPlan full_plan(const NetworkCase& feeder) {
  PlacementPlan plan;
  for (int b = 0; b < feeder.size(); ++b) {
    plan.entries.push_back({MeasurementType::scada_vmag, b, BranchEnd::from});
    plan.entries.push_back({MeasurementType::pseudo_inj_p, b, BranchEnd::from});
    plan.entries.push_back({MeasurementType::pseudo_inj_q, b, BranchEnd::from});
  }
  for (int l = 0; l < static_cast<int>(feeder.branches.size()); ++l) {
    for (auto end : {BranchEnd::from, BranchEnd::to}) {
      plan.entries.push_back({MeasurementType::scada_flow_p, l, end});
      plan.entries.push_back({MeasurementType::scada_flow_q, l, end});
    }
  }
  return plan;
}

MeasurementSet unit_set(const PlacementPlan& plan) {
  MeasurementSet set;
  set.owner = {Subsystem::Kind::feeder, 0};
  for (const auto& k : plan.entries) {
    MeasurementRecord r;
    r.kind = k;
    set.records.push_back(r);
  }
  return set;
}

NetworkCase three_bus_feeder(double b_sh) {
  NetworkCase f;
  f.name = "f3";
  f.buses = {test::bus(0), test::bus(1, 0.2, 0.08), test::bus(2, 0.1, 0.05)};
  f.branches = {test::branch(0, 1, 0.02, 0.04, b_sh), test::branch(1, 2, 0.03, 0.05, b_sh)};
  return f;
}

Eigen::VectorXd unit_flat(const dsse::DsseModel& model) {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(model.state_size());
  x.head(model.feeder().size()).setOnes();
  return x;
}

Eigen::VectorXd random_state(const dsse::DsseModel& model, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> v(0.9, 1.1), a(-0.3, 0.3);
  Eigen::VectorXd x(model.state_size());
  const int n = model.feeder().size();
  for (int i = 0; i < n; ++i) x(i) = v(rng);
  for (Eigen::Index i = n; i < x.size(); ++i) x(i) = a(rng);
  return x;
}

struct Feeders {
  coordination::CtdseSystem system;
  explicit Feeders(const LoadedIntegratedCase& loaded)
      : system(loaded.integrated, plans_or_default(loaded), NoiseSpec{}) {}
  dsse::DsseModel model(int f) const {
    return dsse::DsseModel(system.integrated().feeders[f], system.true_measurements().feeders[f]);
  }
  Eigen::VectorXd truth(int f, const dsse::DsseModel& m) const {
    return m.state_of(system.truth().feeders[f].voltages);
  }
};

}  // namespace

TEST_CASE("flat state without shunts has no flows") {
  const NetworkCase f = three_bus_feeder(0.0);
  const dsse::DsseModel model(f, unit_set(full_plan(f)));
  const Eigen::VectorXd h = model.evaluate(unit_flat(model));
  for (std::size_t r = 0; r < model.measurements().records.size(); ++r) {
    const auto t = model.measurements().records[r].kind.type;
    CHECK(std::abs(h(r) - (t == MeasurementType::scada_vmag ? 1.0 : 0.0)) < 1e-12);
  }
}

TEST_CASE("two-bus feeder readings at the power-flow solution") {
  const double r = 0.03, x = 0.06, p = 0.4, q = 0.15;
  const NetworkCase f = test::two_bus(r, x, p, q);
  const auto pf = solve_feeder_pf(f, 1.02, 0.0);
  PlacementPlan plan{{{MeasurementType::scada_flow_p, 0, BranchEnd::from},
                      {MeasurementType::scada_flow_q, 0, BranchEnd::from},
                      {MeasurementType::pseudo_inj_p, 1, BranchEnd::from},
                      {MeasurementType::pseudo_inj_q, 1, BranchEnd::from}}};
  const dsse::DsseModel model(f, unit_set(plan));
  const Eigen::VectorXd xs = model.state_of(pf.voltages);
  const Eigen::VectorXd h = model.evaluate(xs);
  CHECK(std::abs(h(0) - pf.head.p) < 1e-10);
  CHECK(std::abs(h(1) - pf.head.q) < 1e-10);
  CHECK(std::abs(h(2) + p) < 1e-10);
  CHECK(std::abs(h(3) + q) < 1e-10);

  const auto head = dsse::feeder_head_power(xs, model);
  const double a = 1.02 * 1.02 - 2.0 * (p * r + q * x);
  const double v2sq = (a + std::sqrt(a * a - 4.0 * (p * p + q * q) * (r * r + x * x))) / 2.0;
  CHECK(std::abs(head.p - (p + r * (p * p + q * q) / v2sq)) < 1e-8);
  CHECK(std::abs(head.q - (q + x * (p * p + q * q) / v2sq)) < 1e-8);
}

TEST_CASE("head power is zero on an idle feeder and independent of branch orientation") {
  NetworkCase idle = three_bus_feeder(0.0);
  for (auto& b : idle.buses) b.load_p = b.load_q = 0.0;
  const dsse::DsseModel idle_model(idle, unit_set(full_plan(idle)));
  const auto h0 = dsse::feeder_head_power(unit_flat(idle_model), idle_model);
  CHECK(std::abs(h0.p) < 1e-15);
  CHECK(std::abs(h0.q) < 1e-15);

  const NetworkCase f = three_bus_feeder(0.002);
  NetworkCase flipped = f;
  for (auto& br : flipped.branches) std::swap(br.from, br.to);
  const auto pf = solve_feeder_pf(f, 1.0, 0.0);
  const dsse::DsseModel a(f, unit_set(full_plan(f)));
  const dsse::DsseModel b(flipped, unit_set(full_plan(flipped)));
  const auto ha = dsse::feeder_head_power(a.state_of(pf.voltages), a);
  const auto hb = dsse::feeder_head_power(b.state_of(pf.voltages), b);
  CHECK(std::abs(ha.p - hb.p) < 1e-14);
  CHECK(std::abs(ha.q - hb.q) < 1e-14);
  CHECK(std::abs(ha.p - pf.head.p) < 1e-10);
}

TEST_CASE("magnitude rows of the Jacobian are unit selectors") {
  const NetworkCase f = three_bus_feeder(0.001);
  const dsse::DsseModel model(f, unit_set(full_plan(f)));
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd H = model.jacobian(random_state(model, rng));
  for (std::size_t r = 0; r < model.measurements().records.size(); ++r) {
    const auto& k = model.measurements().records[r].kind;
    if (k.type != MeasurementType::scada_vmag) continue;
    Eigen::RowVectorXd expected = Eigen::RowVectorXd::Zero(model.state_size());
    expected(k.element) = 1.0;
    CHECK(H.row(r) == expected);
  }
}

TEST_CASE("feeder Jacobian matches finite differences at random states") {
  std::mt19937_64 rng(2);
  std::vector<NetworkCase> feeders = {three_bus_feeder(0.004)};
  for (const auto& f : test::load_desk().integrated.feeders) feeders.push_back(f);
  feeders.push_back(test::load_t30().integrated.feeders[0]);
  for (const auto& f : feeders) {
    const dsse::DsseModel model(f, unit_set(full_plan(f)));
    for (int trial = 0; trial < 10; ++trial) {
      const Eigen::VectorXd x = random_state(model, rng);
      const auto fd = test::fd_jacobian([&](const Eigen::VectorXd& p) { return model.evaluate(p); }, x);
      CHECK(test::max_relative_error(model.jacobian(x), fd) < 1e-5);
    }
  }
}

TEST_CASE("flat-state injection angle block is the negated susceptance") {
  const NetworkCase f = test::load_desk().integrated.feeders[1];
  NetworkCase noshunt = f;
  for (auto& br : noshunt.branches) br.b_sh = 0.0;
  const dsse::DsseModel model(noshunt, unit_set(full_plan(noshunt)));
  const Eigen::MatrixXd H = model.jacobian(unit_flat(model));
  const Eigen::MatrixXd B = build_admittance(noshunt).B();
  for (std::size_t r = 0; r < model.measurements().records.size(); ++r) {
    const auto& k = model.measurements().records[r].kind;
    if (k.type != MeasurementType::pseudo_inj_p) continue;
    for (int j = 0; j < noshunt.size(); ++j) {
      if (j == k.element || model.angle_column(j) < 0) continue;
      CHECK(std::abs(H(r, model.angle_column(j)) + B(k.element, j)) < 1e-12);
    }
  }
}

TEST_CASE("head power gradient matches finite differences") {
  const Feeders desk(test::load_desk());
  const auto model = desk.model(0);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::VectorXd x = random_state(model, rng);
    Eigen::VectorXd dp, dq;
    model.head_power_gradient(x, dp, dq);
    const auto fd = test::fd_jacobian(
        [&](const Eigen::VectorXd& p) {
          const auto h = dsse::feeder_head_power(p, model);
          return Eigen::Vector2d(h.p, h.q).eval();
        },
        x);
    CHECK(test::max_relative_error(dp.transpose(), fd.row(0)) < 1e-5);
    CHECK(test::max_relative_error(dq.transpose(), fd.row(1)) < 1e-5);
  }
}

TEST_CASE("zero-noise estimation recovers the power-flow truth") {
  for (const auto& loaded : {test::load_desk(), test::load_t30()}) {
    const Feeders sys(loaded);
    for (int f = 0; f < static_cast<int>(loaded.integrated.feeders.size()); ++f) {
      const auto model = sys.model(f);
      const Eigen::VectorXd truth = sys.truth(f, model);
      const auto res = dsse::solve_dsse(model, model.measurements().values());
      CHECK(res.converged);
      CHECK((res.x - truth).lpNorm<Eigen::Infinity>() < 1e-6);

      const auto hot = dsse::solve_dsse_from(model, model.measurements().values(), truth);
      CHECK(hot.iterations == 1);
      CHECK(hot.converged);
    }
  }
}

TEST_CASE("desk feeders converge within 10 iterations under the default noise") {
  const Feeders desk(test::load_desk());
  for (int trial = 0; trial < 50; ++trial) {
    const auto meas = desk.system.noisy_measurements(42, trial);
    for (int f = 0; f < 2; ++f) {
      const dsse::DsseModel model(desk.system.integrated().feeders[f], meas.feeders[f]);
      const auto res = dsse::solve_dsse(model, meas.feeders[f].values());
      CHECK(res.converged);
      CHECK(res.iterations <= 10);
    }
  }
}

TEST_CASE("readings depend on angle differences only") {
  const auto loaded = test::load_desk();
  const auto pf = solve_global_pf(loaded.integrated);
  const auto plans = plans_or_default(loaded);
  const auto& f = loaded.integrated.feeders[0];
  BusVoltages shifted = pf.feeders[0].voltages;
  shifted.theta.array() += 0.37;
  const auto a = true_measurements(pf.feeders[0].voltages, plans.feeders[0], f, NoiseSpec{}, {});
  const auto b = true_measurements(shifted, plans.feeders[0], f, NoiseSpec{}, {});
  CHECK((a.values() - b.values()).lpNorm<Eigen::Infinity>() < 1e-14);
}

TEST_CASE("the true state is a stationary point of the objective") {
  for (const auto& loaded : {test::load_desk(), test::load_t30()}) {
    const Feeders sys(loaded);
    for (int f = 0; f < static_cast<int>(loaded.integrated.feeders.size()); ++f) {
      const auto model = sys.model(f);
      const Eigen::VectorXd x = sys.truth(f, model);
      const Eigen::VectorXd r = model.measurements().values() - model.evaluate(x);
      const Eigen::VectorXd step = wls::solve_normal_equations(model.jacobian(x), model.weights(), r);
      CHECK(step.lpNorm<Eigen::Infinity>() < 1e-10);
    }
  }
}

TEST_CASE("virtual substation magnitude and flat start") {
  const Feeders desk(test::load_desk());
  const auto model = desk.model(0);
  const Eigen::VectorXd flat = model.flat_start();
  const double vs = desk.system.true_measurements().feeders[0].records[0].value;
  CHECK(flat.head(3).isConstant(vs));
  CHECK(flat.tail(2).isZero());
  const auto pinned = model.with_virtual_substation_vmag(1.01, 1e8);
  CHECK(pinned.measurement_size() == model.measurement_size() + 1);
  CHECK(pinned.weights()(pinned.measurement_size() - 1) == doctest::Approx(1e8));
}

TEST_CASE("phasor readings are rejected by the feeder estimator") {
  const NetworkCase f = three_bus_feeder(0.0);
  CHECK_THROWS_AS(dsse::DsseModel(f, unit_set({{{MeasurementType::pmu_voltage, 0, BranchEnd::from}}})), InputError);
}
