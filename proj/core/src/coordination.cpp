#include "ctdse/coordination.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <utility>

#include "ctdse/errors.hpp"

namespace ctdse::coordination {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

template <typename Fn>
auto in_phase(const char* phase, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const NumericalError& e) {
    throw NumericalError(e.code(), std::string(phase) + " phase: " + e.what());
  } catch (const InputError& e) {
    throw InputError(e.code(), e.location(), std::string(phase) + " phase: " + e.what());
  }
}

struct Injection {
  double value = 0.0;
  double variance = 0.0;
  bool metered = false;
};

// Net consumption at bus k (P^B or Q^B) from the injection meters, else the schedule.
Injection boundary_consumption(const MeasurementSet& meters, MeasurementType type, int k, const Bus& bus,
                               bool active, const NoiseSpec& noise) {
  Injection out;
  for (const auto& rec : meters.records) {
    if (rec.kind.type != type || rec.kind.element != k) continue;
    out.value -= rec.value;
    out.variance += rec.sigma * rec.sigma;
    out.metered = true;
  }
  if (!out.metered) {
    const double scheduled = active ? bus.gen_p - bus.load_p : bus.gen_q - bus.load_q;
    const double sigma = std::max(noise.max_err_pseudo / 3.0 * std::abs(scheduled), noise.pseudo_sigma_floor);
    out.value = -scheduled;
    out.variance = sigma * sigma;
  }
  return out;
}

}  // namespace

BoundaryMeasurements assemble_boundary(const wls::WlsResult& tsse_result, const wls::WlsResult& dsse_result,
                                       const dsse::DsseModel& dsse_model, const MeasurementSet& injection_meters,
                                       const BoundarySystem& bsys, const NetworkCase& transmission,
                                       const NoiseSpec& noise) {
  const int n = transmission.size();
  const int m = bsys.size();
  if (tsse_result.x.size() != 2 * n) {
    throw InputError(InputError::Code::dimension_mismatch, "assemble_boundary",
                     "transmission estimate does not match the case");
  }
  BoundaryMeasurements out;
  out.z.resize(2 * m + 3);
  out.weights.resize(2 * m + 3);
  for (int j = 0; j < m; ++j) {
    const int bus = bsys.nodes[j];
    out.z(j) = tsse_result.x(bus);
    out.weights(j) = 1.0 / tsse_result.covariance(bus, bus);
    out.z(m + j) = tsse_result.x(n + bus);
    out.weights(m + j) = 1.0 / tsse_result.covariance(n + bus, n + bus);
  }
  const int sub = dsse_model.substation();
  out.z(2 * m) = dsse_result.x(sub);
  out.weights(2 * m) = 1.0 / dsse_result.covariance(sub, sub);

  const dsse::HeadPowerEstimate head = dsse::head_power_estimate(dsse_result, dsse_model);
  const int k = bsys.boundary_bus;
  const Bus& bus = transmission.buses.at(k);
  const Injection p = boundary_consumption(injection_meters, MeasurementType::scada_inj_p, k, bus, true, noise);
  const Injection q = boundary_consumption(injection_meters, MeasurementType::scada_inj_q, k, bus, false, noise);
  out.schedule_fallback = !p.metered || !q.metered;
  out.slave = head.value;
  out.boundary = {p.value, q.value};
  out.z(2 * m + 1) = head.value.p + p.value;
  out.z(2 * m + 2) = head.value.q + q.value;
  out.weights(2 * m + 1) = 1.0 / (head.var_p + p.variance);
  out.weights(2 * m + 2) = 1.0 / (head.var_q + q.variance);
  return out;
}

BoundaryModel::BoundaryModel(const BoundarySystem& bsys, const AdmittanceMatrix& adm, Eigen::VectorXd weights)
    : m_(bsys.size()), g_(bsys.size()), b_(bsys.size()), weights_(std::move(weights)) {
  if (m_ < 1 || bsys.nodes.front() != bsys.boundary_bus) {
    throw InputError(InputError::Code::invalid_config, "boundary " + std::to_string(bsys.index),
                     "node list must start with the boundary bus");
  }
  if (weights_.size() != 2 * m_ + 3) {
    throw InputError(InputError::Code::dimension_mismatch, "boundary " + std::to_string(bsys.index),
                     "expected " + std::to_string(2 * m_ + 3) + " weights");
  }
  const int k = bsys.boundary_bus;
  for (int j = 0; j < m_; ++j) {
    g_(j) = adm.Y(k, bsys.nodes[j]).real();
    b_(j) = adm.Y(k, bsys.nodes[j]).imag();
  }
}

HeadPower BoundaryModel::master_flow(const Eigen::VectorXd& y) const {
  const double vk = y(0);
  const double ak = y(m_);
  double p = 0.0, q = 0.0;
  for (int j = 0; j < m_; ++j) {
    const double a = ak - y(m_ + j);
    p += y(j) * (g_(j) * std::cos(a) + b_(j) * std::sin(a));
    q += y(j) * (g_(j) * std::sin(a) - b_(j) * std::cos(a));
  }
  return {-vk * p, -vk * q};
}

Eigen::VectorXd BoundaryModel::evaluate(const Eigen::VectorXd& y) const {
  Eigen::VectorXd h(measurement_size());
  for (int j = 0; j < m_; ++j) {
    h(j) = y(j) * std::cos(y(m_ + j));
    h(m_ + j) = y(j) * std::sin(y(m_ + j));
  }
  h(2 * m_) = y(0);
  const HeadPower f = master_flow(y);
  h(2 * m_ + 1) = f.p;
  h(2 * m_ + 2) = f.q;
  return h;
}

Eigen::MatrixXd BoundaryModel::jacobian(const Eigen::VectorXd& y) const {
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(measurement_size(), state_size());
  for (int j = 0; j < m_; ++j) {
    const double v = y(j);
    const double c = std::cos(y(m_ + j));
    const double s = std::sin(y(m_ + j));
    H(j, j) = c;
    H(j, m_ + j) = -v * s;
    H(m_ + j, j) = s;
    H(m_ + j, m_ + j) = v * c;
  }
  H(2 * m_, 0) = 1.0;

  // Partials of the injection at k, negated below.
  const double vk = y(0);
  const double ak = y(m_);
  const HeadPower f = master_flow(y);
  const double p = -f.p;
  const double q = -f.q;
  const int rp = 2 * m_ + 1;
  const int rq = 2 * m_ + 2;
  for (int j = 1; j < m_; ++j) {
    const double a = ak - y(m_ + j);
    const double gc_bs = g_(j) * std::cos(a) + b_(j) * std::sin(a);
    const double gs_bc = g_(j) * std::sin(a) - b_(j) * std::cos(a);
    H(rp, j) = -vk * gc_bs;
    H(rp, m_ + j) = -vk * y(j) * gs_bc;
    H(rq, j) = -vk * gs_bc;
    H(rq, m_ + j) = vk * y(j) * gc_bs;
  }
  H(rp, 0) = -(p / vk + g_(0) * vk);
  H(rp, m_) = -(-q - b_(0) * vk * vk);
  H(rq, 0) = -(q / vk - b_(0) * vk);
  H(rq, m_) = -(p - g_(0) * vk * vk);
  return H;
}

Eigen::VectorXd coordination_h(const Eigen::VectorXd& y, const BoundarySystem& bsys, const AdmittanceMatrix& adm) {
  return BoundaryModel(bsys, adm, Eigen::VectorXd::Ones(2 * bsys.size() + 3)).evaluate(y);
}

Eigen::MatrixXd coordination_jacobian(const Eigen::VectorXd& y, const BoundarySystem& bsys,
                                      const AdmittanceMatrix& adm) {
  return BoundaryModel(bsys, adm, Eigen::VectorXd::Ones(2 * bsys.size() + 3)).jacobian(y);
}

Eigen::VectorXd boundary_state(const Eigen::VectorXd& x_rect, const BoundarySystem& bsys) {
  const Eigen::Index n = x_rect.size() / 2;
  const int m = bsys.size();
  Eigen::VectorXd y(2 * m);
  for (int j = 0; j < m; ++j) {
    const int bus = bsys.nodes[j];
    y(j) = std::hypot(x_rect(bus), x_rect(n + bus));
    y(m + j) = std::atan2(x_rect(n + bus), x_rect(bus));
  }
  return y;
}

Mismatch boundary_mismatch(const Eigen::VectorXd& y, const BoundaryMeasurements& bmeas, const BoundarySystem& bsys,
                           const AdmittanceMatrix& adm) {
  const int m = bsys.size();
  const HeadPower f = BoundaryModel(bsys, adm, Eigen::VectorXd::Ones(2 * m + 3)).master_flow(y);
  return {bmeas.z(2 * m + 1) - f.p, bmeas.z(2 * m + 2) - f.q};
}

BoundaryResult solve_boundary(const BoundaryMeasurements& bmeas, const BoundarySystem& bsys,
                              const AdmittanceMatrix& adm, const Eigen::VectorXd& y0,
                              const BoundaryOptions& options) {
  BoundaryResult out;
  out.y0 = y0;
  const BoundaryModel model(bsys, adm, bmeas.weights);
  const int m = bsys.size();
  auto mismatch_at = [&](const Eigen::VectorXd& y) {
    const HeadPower f = model.master_flow(y);
    return Mismatch{bmeas.z(2 * m + 1) - f.p, bmeas.z(2 * m + 2) - f.q};
  };
  out.before = mismatch_at(y0);
  wls::GaussNewtonOptions gn{options.tolerance, options.max_iterations, {}};
  gn.on_iterate = [&](int it, const Eigen::VectorXd& y, double J) {
    out.trajectory.push_back({it, mismatch_at(y), J});
  };
  try {
    out.result = wls::gauss_newton(model, bmeas.z, y0, gn);
    out.converged = out.result.converged;
    if (!out.converged) {
      out.failure = "boundary " + std::to_string(bsys.index) + " did not converge in " +
                    std::to_string(options.max_iterations) + " iterations";
    }
    out.after = mismatch_at(out.result.x);
  } catch (const Error& e) {
    out.converged = false;
    out.failure = e.what();
    out.after = out.before;
  }
  return out;
}

CtdseSystem::CtdseSystem(IntegratedCase integrated, ExperimentPlans plans, NoiseSpec noise)
    : integrated_(std::move(integrated)), plans_(std::move(plans)), noise_(noise) {
  noise_.validate();
  partition_ = ctdse::partition(integrated_);
  const std::size_t f = integrated_.feeders.size();
  if (plans_.feeders.size() != f) {
    throw InputError(InputError::Code::invalid_plan, "plans", "expected one plan per feeder");
  }
  if (plans_.boundary.empty()) plans_.boundary.resize(f);
  if (plans_.boundary.size() != f) {
    throw InputError(InputError::Code::invalid_plan, "plans", "expected one boundary plan per feeder");
  }
  const auto& tx = integrated_.transmission;
  adm_ = build_admittance(tx);
  truth_ = solve_global_pf(integrated_);

  true_.transmission = ctdse::true_measurements(truth_.transmission.voltages, plans_.transmission, tx, noise_,
                                                {Subsystem::Kind::transmission, 0});
  for (std::size_t i = 0; i < f; ++i) {
    const int idx = static_cast<int>(i);
    true_.feeders.push_back(ctdse::true_measurements(truth_.feeders[i].voltages, plans_.feeders[i],
                                                     integrated_.feeders[i], noise_,
                                                     {Subsystem::Kind::feeder, idx}));
    true_.boundary.push_back(ctdse::true_measurements(truth_.transmission.voltages, plans_.boundary[i], tx, noise_,
                                                      {Subsystem::Kind::boundary, idx}));
  }
}

TrialMeasurements CtdseSystem::noisy_measurements(std::uint64_t master_seed, std::uint64_t trial) const {
  auto noisy = [&](const MeasurementSet& set) {
    return add_noise(set, noise_, stream_seed(master_seed, trial, set.owner));
  };
  TrialMeasurements out;
  out.transmission = noisy(true_.transmission);
  for (const auto& set : true_.feeders) out.feeders.push_back(noisy(set));
  for (const auto& set : true_.boundary) out.boundary.push_back(noisy(set));
  return out;
}

CtdseResult CtdseSystem::run(const TrialMeasurements& measurements, const CtdseOptions& options) const {
  const auto& tx = integrated_.transmission;
  const int f = static_cast<int>(integrated_.feeders.size());
  if (static_cast<int>(measurements.feeders.size()) != f || static_cast<int>(measurements.boundary.size()) != f) {
    throw InputError(InputError::Code::dimension_mismatch, "run", "measurement sets do not match the feeders");
  }
  if (options.rounds < 1) throw InputError(InputError::Code::invalid_config, "run", "rounds must be at least 1");
  CtdseResult out;

  // Local phase.
  auto start = Clock::now();
  const tsse::TsseModel tsse_model = in_phase("local", [&] {
    return tsse::build_tsse_model(tx, adm_, measurements.transmission);
  });
  const Eigen::VectorXd z_t = measurements.transmission.values();
  std::vector<dsse::DsseModel> dsse_models;
  std::vector<Eigen::VectorXd> z_d;
  in_phase("local", [&] {
    out.local.tsse = tsse::solve_tsse(tsse_model, z_t);
    for (int i = 0; i < f; ++i) {
      dsse_models.emplace_back(integrated_.feeders[i], measurements.feeders[i]);
      z_d.push_back(measurements.feeders[i].values());
      out.local.dsse.push_back(dsse::solve_dsse(dsse_models.back(), z_d.back(), options.dsse));
      if (!out.local.dsse.back().converged) {
        throw NumericalError(NumericalError::Code::diverged,
                             "feeder " + std::to_string(i) + " estimator did not converge");
      }
    }
    return 0;
  });
  out.times.local_ms = elapsed_ms(start);

  out.refined = out.local;
  out.global_angles.assign(f, false);
  if (!options.coordination) {
    out.transmission = tsse::to_polar(out.refined.tsse.x);
    for (int i = 0; i < f; ++i) out.feeders.push_back(dsse_models[i].voltages(out.refined.dsse[i].x));
    return out;
  }

  const auto& boundaries = partition_.boundaries;
  const bool disjoint = partition_.boundaries_disjoint();
  std::vector<int> owners(tx.size(), 0);
  for (const auto& bsys : boundaries) {
    for (int bus : bsys.nodes) ++owners[bus];
  }

  for (int round = 0; round < options.rounds; ++round) {
    // Coordination phase.
    start = Clock::now();
    out.boundary_measurements.clear();
    CoordinationOutcome coord;
    coord.boundaries.resize(f);
    std::vector<BoundaryMeasurements> base(f);
    in_phase("coordination", [&] {
      for (int i = 0; i < f; ++i) {
        base[i] = assemble_boundary(out.refined.tsse, out.refined.dsse[i], dsse_models[i], measurements.boundary[i],
                                    boundaries[i], tx, noise_);
      }
      return 0;
    });
    std::vector<BoundaryMeasurements> used = base;
    // Latest coordinated phasor of each shared bus, with the boundary that produced it.
    std::map<int, std::pair<int, Complex>> latest;
    const int passes = disjoint ? 1 : options.max_sweeps;
    bool settled = disjoint;
    for (int pass = 0; pass < passes; ++pass) {
      double change = 0.0;
      for (int i = 0; i < f; ++i) {
        const auto& bsys = boundaries[i];
        const int m = bsys.size();
        BoundaryMeasurements bm = base[i];
        for (int j = 0; j < m; ++j) {
          const auto it = latest.find(bsys.nodes[j]);
          if (it == latest.end() || it->second.first == i) continue;
          bm.z(j) = it->second.second.real();
          bm.z(m + j) = it->second.second.imag();
        }
        const Eigen::VectorXd y0 = pass == 0 || !coord.boundaries[i].converged
                                       ? boundary_state(out.refined.tsse.x, bsys)
                                       : coord.boundaries[i].result.x;
        BoundaryResult res = solve_boundary(bm, bsys, adm_, y0, options.boundary);
        if (res.converged) {
          if (pass > 0 && coord.boundaries[i].converged) {
            change = std::max(change, (res.result.x - coord.boundaries[i].result.x).lpNorm<Eigen::Infinity>());
          } else if (pass > 0) {
            change = std::numeric_limits<double>::infinity();
          }
          for (int j = 0; j < m; ++j) {
            if (owners[bsys.nodes[j]] > 1) {
              latest[bsys.nodes[j]] = {i, std::polar(res.result.x(j), res.result.x(m + j))};
            }
          }
        }
        if (pass == 0) res.before = boundary_mismatch(y0, base[i], bsys, adm_);
        else res.before = coord.boundaries[i].before;
        used[i] = std::move(bm);
        coord.boundaries[i] = std::move(res);
      }
      coord.sweeps = pass + 1;
      if (!disjoint && pass > 0 && change < options.boundary.tolerance) {
        settled = true;
        break;
      }
    }
    coord.converged = settled;
    for (const auto& b : coord.boundaries) coord.converged = coord.converged && b.converged;
    out.boundary_measurements = std::move(used);
    out.coordination = std::move(coord);
    out.times.coordination_ms += elapsed_ms(start);

    // Update phase.
    start = Clock::now();
    const auto& results = out.coordination.boundaries;
    if (options.update) {
      in_phase("update", [&] {
        std::map<int, Complex> virtual_buses;
        for (int i = 0; i < f; ++i) {
          if (!results[i].converged) continue;
          const int m = boundaries[i].size();
          for (int j = 0; j < m; ++j) {
            virtual_buses[boundaries[i].nodes[j]] = std::polar(results[i].result.x(j), results[i].result.x(m + j));
          }
        }
        std::vector<tsse::VirtualPhasor> phasors;
        for (const auto& [bus, value] : virtual_buses) phasors.push_back({bus, value});
        tsse::TsseModel refined_model = tsse_model;
        Eigen::VectorXd z = z_t;
        tsse::append_virtual_phasors(refined_model, z, phasors, options.virtual_weight);
        LocalEstimates next;
        next.tsse = tsse::solve_tsse(refined_model, z);
        for (int i = 0; i < f; ++i) {
          if (!results[i].converged) {
            next.dsse.push_back(out.refined.dsse[i]);
            continue;
          }
          const double vk = results[i].result.x(0);
          const dsse::DsseModel model = dsse_models[i].with_virtual_substation_vmag(vk, options.virtual_weight);
          Eigen::VectorXd zi(z_d[i].size() + 1);
          zi << z_d[i], vk;
          next.dsse.push_back(dsse::solve_dsse_from(model, zi, out.refined.dsse[i].x, options.dsse));
        }
        out.refined = std::move(next);
        return 0;
      });
    }
    out.times.update_ms += elapsed_ms(start);
  }

  out.transmission = tsse::to_polar(out.refined.tsse.x);
  const auto& results = out.coordination.boundaries;
  for (int i = 0; i < f; ++i) {
    BusVoltages v = dsse_models[i].voltages(out.refined.dsse[i].x);
    if (results[i].converged) {
      const int m = boundaries[i].size();
      v.theta.array() += results[i].result.x(m);
      out.global_angles[i] = true;
    }
    out.feeders.push_back(std::move(v));
  }
  return out;
}

CtdseResult run_ctdse(const IntegratedCase& integrated, const ExperimentPlans& plans, const NoiseSpec& noise,
                      std::uint64_t seed, const CtdseOptions& options) {
  const CtdseSystem system(integrated, plans, noise);
  return system.run(system.noisy_measurements(seed, 0), options);
}

}  // namespace ctdse::coordination
