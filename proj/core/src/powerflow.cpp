#include "ctdse/powerflow.hpp"

#include <cmath>
#include <queue>

#include <Eigen/LU>

#include "ctdse/errors.hpp"
#include "injections.hpp"

namespace ctdse {

namespace {

struct RadialOrder {
  std::vector<int> order;  // BFS order from the substation
  std::vector<int> parent;
  std::vector<int> parent_branch;
};

RadialOrder radial_order(const NetworkCase& feeder) {
  const int n = feeder.size();
  std::vector<std::vector<std::pair<int, int>>> adj(n);
  for (int l = 0; l < static_cast<int>(feeder.branches.size()); ++l) {
    adj[feeder.branches[l].from].emplace_back(feeder.branches[l].to, l);
    adj[feeder.branches[l].to].emplace_back(feeder.branches[l].from, l);
  }
  RadialOrder ro;
  ro.parent.assign(n, -1);
  ro.parent_branch.assign(n, -1);
  std::vector<bool> seen(n, false);
  std::queue<int> pending;
  pending.push(feeder.slack_bus);
  seen[feeder.slack_bus] = true;
  while (!pending.empty()) {
    const int u = pending.front();
    pending.pop();
    ro.order.push_back(u);
    for (auto [v, l] : adj[u]) {
      if (seen[v]) continue;
      seen[v] = true;
      ro.parent[v] = u;
      ro.parent_branch[v] = l;
      pending.push(v);
    }
  }
  return ro;
}

double feeder_mismatch(const NetworkCase& feeder, const AdmittanceMatrix& adm, const Eigen::VectorXcd& V) {
  const Eigen::VectorXcd I = adm.Y * V;
  double worst = 0.0;
  for (int b = 0; b < feeder.size(); ++b) {
    if (b == feeder.slack_bus) continue;
    const Complex s = V(b) * std::conj(I(b)) - feeder.buses[b].scheduled_injection();
    worst = std::max({worst, std::abs(s.real()), std::abs(s.imag())});
  }
  return worst;
}

}  // namespace

PowerFlowSolution solve_transmission_pf(const NetworkCase& network, std::span<const EquivalentLoad> equivalent_loads,
                                        const PowerFlowOptions& options) {
  const int n = network.size();
  const int slack = network.slack_bus;
  const detail::AdmittancePattern pattern(build_admittance(network));

  Eigen::VectorXd p_spec(n), q_spec(n);
  for (int i = 0; i < n; ++i) {
    const Complex s = network.buses[i].scheduled_injection();
    p_spec(i) = s.real();
    q_spec(i) = s.imag();
  }
  for (const auto& eq : equivalent_loads) {
    if (eq.bus < 0 || eq.bus >= n) {
      throw InputError(InputError::Code::unknown_bus, network.name, "equivalent load on unknown bus");
    }
    p_spec(eq.bus) -= eq.p;
    q_spec(eq.bus) -= eq.q;
  }

  // Unknown ordering: theta then v for each non-slack bus.
  std::vector<int> pq;
  for (int i = 0; i < n; ++i) {
    if (i != slack) pq.push_back(i);
  }
  const int m = static_cast<int>(pq.size());
  std::vector<int> position(n, -1);
  for (int k = 0; k < m; ++k) position[pq[k]] = k;

  PowerFlowSolution sol;
  sol.voltages.v = Eigen::VectorXd::Ones(n);
  sol.voltages.theta = Eigen::VectorXd::Zero(n);
  sol.voltages.v(slack) = network.buses[slack].v_set;

  Eigen::VectorXd mismatch(2 * m);
  Eigen::MatrixXd jac(2 * m, 2 * m);
  Eigen::VectorXd dp_dth(n), dp_dv(n), dq_dth(n), dq_dv(n);
  auto evaluate_mismatch = [&]() {
    for (int k = 0; k < m; ++k) {
      double p = 0.0, q = 0.0;
      pattern.injection(pq[k], sol.voltages.v, sol.voltages.theta, p, q);
      mismatch(k) = p_spec(pq[k]) - p;
      mismatch(m + k) = q_spec(pq[k]) - q;
    }
    return m == 0 ? 0.0 : mismatch.lpNorm<Eigen::Infinity>();
  };

  double worst = evaluate_mismatch();
  for (int it = 0; it <= options.max_iterations; ++it) {
    if (worst < options.tolerance) {
      sol.converged = true;
      sol.iterations = it;
      sol.mismatch = worst;
      return sol;
    }
    if (it == options.max_iterations) break;
    jac.setZero();
    for (int k = 0; k < m; ++k) {
      const int i = pq[k];
      dp_dth.setZero();
      dp_dv.setZero();
      dq_dth.setZero();
      dq_dv.setZero();
      pattern.injection_partials(i, sol.voltages.v, sol.voltages.theta, dp_dth, dp_dv, dq_dth, dq_dv);
      for (int j : pattern.columns[i]) {
        const int c = position[j];
        if (c < 0) continue;
        jac(k, c) = dp_dth(j);
        jac(k, m + c) = dp_dv(j);
        jac(m + k, c) = dq_dth(j);
        jac(m + k, m + c) = dq_dv(j);
      }
    }
    const Eigen::VectorXd dx = jac.partialPivLu().solve(mismatch);
    if (!dx.allFinite()) break;
    for (int k = 0; k < m; ++k) {
      sol.voltages.theta(pq[k]) += dx(k);
      sol.voltages.v(pq[k]) += dx(m + k);
    }
    worst = evaluate_mismatch();
  }
  throw NumericalError(NumericalError::Code::diverged,
                       "Newton-Raphson power flow on '" + network.name + "' did not converge in " +
                           std::to_string(options.max_iterations) + " iterations (mismatch " +
                           std::to_string(worst) + ")");
}

HeadPower feeder_head_power(const NetworkCase& feeder, const BusVoltages& voltages) {
  const detail::AdmittancePattern pattern(build_admittance(feeder));
  double p = 0.0, q = 0.0;
  pattern.injection(feeder.slack_bus, voltages.v, voltages.theta, p, q);
  return {p, q};
}

PowerFlowSolution solve_feeder_pf(const NetworkCase& feeder, double head_v, double head_theta,
                                  const PowerFlowOptions& options) {
  if (!feeder.is_radial()) {
    throw InputError(InputError::Code::not_radial, feeder.name, "backward/forward sweep needs a radial feeder");
  }
  for (const auto& br : feeder.branches) {
    if (br.tap != 1.0 || br.shift != 0.0) {
      throw InputError(InputError::Code::invalid_config, feeder.name, "feeder branches cannot carry taps");
    }
  }
  const int n = feeder.size();
  const AdmittanceMatrix adm = build_admittance(feeder);
  const RadialOrder ro = radial_order(feeder);
  if (static_cast<int>(ro.order.size()) != n) {
    throw InputError(InputError::Code::disconnected, feeder.name, "feeder graph is disconnected");
  }

  // Shunt admittance seen at each node: bus shunt plus half of every incident line charging.
  Eigen::VectorXcd shunt = Eigen::VectorXcd::Zero(n);
  for (int b = 0; b < n; ++b) shunt(b) = Complex(0.0, feeder.buses[b].shunt_b);
  for (const auto& br : feeder.branches) {
    shunt(br.from) += Complex(0.0, br.b_sh / 2.0);
    shunt(br.to) += Complex(0.0, br.b_sh / 2.0);
  }

  const Complex head = std::polar(head_v, head_theta);
  Eigen::VectorXcd V = Eigen::VectorXcd::Constant(n, head);
  Eigen::VectorXcd branch_current(n);

  PowerFlowSolution sol;
  double worst = feeder_mismatch(feeder, adm, V);
  for (int it = 0; it <= options.max_iterations; ++it) {
    if (worst < options.tolerance) {
      sol.converged = true;
      sol.iterations = it;
      break;
    }
    if (it == options.max_iterations) {
      throw NumericalError(NumericalError::Code::diverged,
                           "backward/forward sweep on '" + feeder.name + "' did not converge (mismatch " +
                               std::to_string(worst) + ")");
    }
    // Backward: accumulate the current each node and its subtree draw through the parent branch.
    for (auto rit = ro.order.rbegin(); rit != ro.order.rend(); ++rit) {
      const int b = *rit;
      const Complex consumption = -feeder.buses[b].scheduled_injection();
      branch_current(b) = std::conj(consumption / V(b)) + shunt(b) * V(b);
    }
    for (auto rit = ro.order.rbegin(); rit != ro.order.rend(); ++rit) {
      const int b = *rit;
      if (ro.parent[b] >= 0) branch_current(ro.parent[b]) += branch_current(b);
    }
    // Forward: voltage drops from the substation outwards.
    for (int b : ro.order) {
      if (ro.parent[b] < 0) continue;
      const auto& br = feeder.branches[ro.parent_branch[b]];
      V(b) = V(ro.parent[b]) - Complex(br.r, br.x) * branch_current(b);
    }
    worst = feeder_mismatch(feeder, adm, V);
  }

  sol.mismatch = worst;
  sol.voltages.v = V.cwiseAbs();
  sol.voltages.theta.resize(n);
  for (int b = 0; b < n; ++b) sol.voltages.theta(b) = std::arg(V(b));
  sol.head = feeder_head_power(feeder, sol.voltages);
  return sol;
}

GlobalPowerFlow solve_global_pf(const IntegratedCase& integrated, const GlobalPowerFlowOptions& options) {
  const int f = static_cast<int>(integrated.feeders.size());
  GlobalPowerFlow out;
  out.heads.assign(f, HeadPower{});
  out.feeders.resize(f);
  std::vector<Complex> previous(f, Complex(0.0, 0.0));

  for (int outer = 1; outer <= options.max_outer_iterations; ++outer) {
    std::vector<EquivalentLoad> loads;
    for (int i = 0; i < f; ++i) {
      loads.push_back({integrated.link_of(i).transmission_bus, out.heads[i].p, out.heads[i].q});
    }
    out.transmission = solve_transmission_pf(integrated.transmission, loads, options.transmission);

    double change = 0.0;
    for (int i = 0; i < f; ++i) {
      const int k = integrated.link_of(i).transmission_bus;
      const double vk = out.transmission.voltages.v(k);
      const double thk = out.transmission.voltages.theta(k);
      out.feeders[i] = solve_feeder_pf(integrated.feeders[i], vk, thk, options.feeder);
      out.heads[i] = out.feeders[i].head;
      const Complex vb = std::polar(vk, thk);
      change = std::max(change, std::abs(vb - previous[i]));
      previous[i] = vb;
    }
    out.outer_iterations = outer;
    if (outer > 1 && change < options.tolerance) {
      out.converged = true;
      return out;
    }
  }
  throw NumericalError(NumericalError::Code::diverged, "master-slave splitting did not converge in " +
                                                           std::to_string(options.max_outer_iterations) +
                                                           " outer iterations");
}

MergedCase merge(const IntegratedCase& integrated) {
  MergedCase merged;
  merged.network = integrated.transmission;
  merged.network.name = integrated.transmission.name + "+feeders";
  auto& net = merged.network;
  for (int i = 0; i < static_cast<int>(integrated.feeders.size()); ++i) {
    const auto& feeder = integrated.feeders[i];
    const int k = integrated.link_of(i).transmission_bus;
    std::vector<int> index(feeder.size(), -1);
    for (int b = 0; b < feeder.size(); ++b) {
      if (b == feeder.slack_bus) {
        // Substations carry no load (checked by partition()), so folding is a pure relabel.
        index[b] = k;
        continue;
      }
      Bus bus = feeder.buses[b];
      bus.id = net.size();
      bus.kind = NodeKind::slave;
      index[b] = bus.id;
      net.buses.push_back(bus);
      net.external_ids.push_back(-1);
    }
    for (Branch br : feeder.branches) {
      br.from = index[br.from];
      br.to = index[br.to];
      net.branches.push_back(br);
    }
    merged.feeder_index.push_back(std::move(index));
  }
  return merged;
}

GlobalPowerFlow solve_monolithic_pf(const IntegratedCase& integrated, const PowerFlowOptions& options) {
  const MergedCase merged = merge(integrated);
  const PowerFlowSolution whole = solve_transmission_pf(merged.network, {}, options);
  const int nt = integrated.transmission.size();

  GlobalPowerFlow out;
  out.converged = whole.converged;
  out.outer_iterations = 1;
  out.transmission.converged = whole.converged;
  out.transmission.iterations = whole.iterations;
  out.transmission.mismatch = whole.mismatch;
  out.transmission.voltages.v = whole.voltages.v.head(nt);
  out.transmission.voltages.theta = whole.voltages.theta.head(nt);
  for (int i = 0; i < static_cast<int>(integrated.feeders.size()); ++i) {
    const auto& feeder = integrated.feeders[i];
    PowerFlowSolution fs;
    fs.converged = whole.converged;
    fs.iterations = whole.iterations;
    fs.voltages.v.resize(feeder.size());
    fs.voltages.theta.resize(feeder.size());
    for (int b = 0; b < feeder.size(); ++b) {
      fs.voltages.v(b) = whole.voltages.v(merged.feeder_index[i][b]);
      fs.voltages.theta(b) = whole.voltages.theta(merged.feeder_index[i][b]);
    }
    fs.head = feeder_head_power(feeder, fs.voltages);
    out.heads.push_back(fs.head);
    out.feeders.push_back(std::move(fs));
  }
  return out;
}

}  // namespace ctdse
