#include "ctdse/dsse.hpp"

#include <cmath>

#include "ctdse/errors.hpp"
#include "injections.hpp"

namespace ctdse::dsse {

namespace {

bool is_injection(MeasurementType t) {
  return t == MeasurementType::pseudo_inj_p || t == MeasurementType::pseudo_inj_q ||
         t == MeasurementType::scada_inj_p || t == MeasurementType::scada_inj_q;
}

bool is_active(MeasurementType t) {
  return t == MeasurementType::pseudo_inj_p || t == MeasurementType::scada_inj_p ||
         t == MeasurementType::scada_flow_p;
}

// Oriented branch i -> j seen from the metered end.
struct FlowTerms {
  int i, j;
  double g, b, half_sh;
};

FlowTerms flow_terms(const NetworkCase& feeder, const MeasurementKind& kind) {
  const auto& br = feeder.branches[kind.element];
  const Complex ys = br.series_admittance();
  FlowTerms t{br.from, br.to, ys.real(), ys.imag(), br.b_sh / 2.0};
  if (kind.end == BranchEnd::to) std::swap(t.i, t.j);
  return t;
}

}  // namespace

DsseModel::DsseModel(NetworkCase feeder, MeasurementSet measurements)
    : feeder_(std::move(feeder)), measurements_(std::move(measurements)) {
  PlacementPlan plan;
  for (const auto& rec : measurements_.records) plan.entries.push_back(rec.kind);
  check_plan(plan, feeder_);
  for (std::size_t r = 0; r < measurements_.records.size(); ++r) {
    const auto& kind = measurements_.records[r].kind;
    if (kind.is_phasor()) {
      throw InputError(InputError::Code::invalid_plan, feeder_.name + "/measurements/" + std::to_string(r),
                       std::string("feeder estimator does not accept ") + to_string(kind.type));
    }
    if (kind.on_branch()) {
      const auto& br = feeder_.branches[kind.element];
      if (br.tap != 1.0 || br.shift != 0.0) {
        throw InputError(InputError::Code::invalid_config, feeder_.name, "feeder branches cannot carry taps");
      }
    }
  }
  weights_ = ctdse::weights(measurements_);
  adm_ = build_admittance(feeder_);
  const detail::AdmittancePattern pattern(adm_);
  G_ = pattern.G;
  B_ = pattern.B;
  columns_ = pattern.columns;
  angle_column_.assign(feeder_.size(), -1);
  int col = feeder_.size();
  for (int b = 0; b < feeder_.size(); ++b) {
    if (b != feeder_.slack_bus) angle_column_[b] = col++;
  }
}

int DsseModel::angle_column(int bus) const { return angle_column_.at(bus); }

BusVoltages DsseModel::voltages(const Eigen::VectorXd& x) const {
  const int n = feeder_.size();
  BusVoltages out;
  out.v = x.head(n);
  out.theta = Eigen::VectorXd::Zero(n);
  for (int b = 0; b < n; ++b) {
    if (angle_column_[b] >= 0) out.theta(b) = x(angle_column_[b]);
  }
  return out;
}

Eigen::VectorXd DsseModel::state_of(const BusVoltages& voltages) const {
  const int n = feeder_.size();
  Eigen::VectorXd x(state_size());
  x.head(n) = voltages.v;
  const double ref = voltages.theta(feeder_.slack_bus);
  for (int b = 0; b < n; ++b) {
    if (angle_column_[b] >= 0) x(angle_column_[b]) = voltages.theta(b) - ref;
  }
  return x;
}

Eigen::VectorXd DsseModel::flat_start() const {
  double vs = 1.0;
  for (const auto& rec : measurements_.records) {
    if (rec.kind.type == MeasurementType::scada_vmag && rec.kind.element == feeder_.slack_bus) {
      vs = rec.value;
      break;
    }
  }
  Eigen::VectorXd x = Eigen::VectorXd::Zero(state_size());
  x.head(feeder_.size()).setConstant(vs);
  return x;
}

DsseModel DsseModel::with_virtual_substation_vmag(double v, double weight) const {
  MeasurementSet set = measurements_;
  MeasurementRecord rec;
  rec.kind = {MeasurementType::scada_vmag, feeder_.slack_bus, BranchEnd::from};
  rec.value = v;
  rec.sigma = 1.0 / std::sqrt(weight);
  set.records.push_back(rec);
  return DsseModel(feeder_, std::move(set));
}

Eigen::VectorXd DsseModel::evaluate(const Eigen::VectorXd& x) const {
  const BusVoltages s = voltages(x);
  Eigen::VectorXd h(measurement_size());
  for (std::size_t r = 0; r < measurements_.records.size(); ++r) {
    const auto& kind = measurements_.records[r].kind;
    switch (kind.type) {
      case MeasurementType::scada_vmag:
        h(r) = s.v(kind.element);
        break;
      case MeasurementType::scada_flow_p:
      case MeasurementType::scada_flow_q: {
        const FlowTerms t = flow_terms(feeder_, kind);
        const double vi = s.v(t.i), vj = s.v(t.j);
        const double a = s.theta(t.i) - s.theta(t.j);
        const double c = std::cos(a), sn = std::sin(a);
        if (kind.type == MeasurementType::scada_flow_p) {
          h(r) = vi * vi * t.g - vi * vj * (t.g * c + t.b * sn);
        } else {
          h(r) = -vi * vi * (t.b + t.half_sh) - vi * vj * (t.g * sn - t.b * c);
        }
        break;
      }
      default: {
        double p = 0.0, q = 0.0;
        detail::injection(G_, B_, columns_[kind.element], kind.element, s.v, s.theta, p, q);
        h(r) = is_active(kind.type) ? p : q;
        break;
      }
    }
  }
  return h;
}

Eigen::MatrixXd DsseModel::jacobian(const Eigen::VectorXd& x) const {
  const int n = feeder_.size();
  const BusVoltages s = voltages(x);
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(measurement_size(), state_size());
  auto put_angle = [&](Eigen::Index row, int bus, double value) {
    if (angle_column_[bus] >= 0) H(row, angle_column_[bus]) += value;
  };

  Eigen::VectorXd dp_dth(n), dp_dv(n), dq_dth(n), dq_dv(n);
  for (std::size_t r = 0; r < measurements_.records.size(); ++r) {
    const auto& kind = measurements_.records[r].kind;
    const auto row = static_cast<Eigen::Index>(r);
    if (kind.type == MeasurementType::scada_vmag) {
      H(row, kind.element) = 1.0;
    } else if (kind.on_branch()) {
      const FlowTerms t = flow_terms(feeder_, kind);
      const double vi = s.v(t.i), vj = s.v(t.j);
      const double a = s.theta(t.i) - s.theta(t.j);
      const double c = std::cos(a), sn = std::sin(a);
      const double gc_bs = t.g * c + t.b * sn;
      const double gs_bc = t.g * sn - t.b * c;
      if (kind.type == MeasurementType::scada_flow_p) {
        H(row, t.i) += 2.0 * vi * t.g - vj * gc_bs;
        H(row, t.j) += -vi * gc_bs;
        put_angle(row, t.i, vi * vj * gs_bc);
        put_angle(row, t.j, -vi * vj * gs_bc);
      } else {
        H(row, t.i) += -2.0 * vi * (t.b + t.half_sh) - vj * gs_bc;
        H(row, t.j) += -vi * gs_bc;
        put_angle(row, t.i, -vi * vj * gc_bs);
        put_angle(row, t.j, vi * vj * gc_bs);
      }
    } else if (is_injection(kind.type)) {
      const int i = kind.element;
      dp_dth.setZero();
      dp_dv.setZero();
      dq_dth.setZero();
      dq_dv.setZero();
      detail::injection_partials(G_, B_, columns_[i], i, s.v, s.theta, dp_dth, dp_dv, dq_dth, dq_dv);
      const bool active = is_active(kind.type);
      for (int j : columns_[i]) {
        H(row, j) += active ? dp_dv(j) : dq_dv(j);
        put_angle(row, j, active ? dp_dth(j) : dq_dth(j));
      }
    }
  }
  return H;
}

void DsseModel::head_power_gradient(const Eigen::VectorXd& x, Eigen::VectorXd& dp, Eigen::VectorXd& dq) const {
  const int n = feeder_.size();
  const BusVoltages s = voltages(x);
  Eigen::VectorXd dp_dth = Eigen::VectorXd::Zero(n), dp_dv = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd dq_dth = Eigen::VectorXd::Zero(n), dq_dv = Eigen::VectorXd::Zero(n);
  const int sub = feeder_.slack_bus;
  detail::injection_partials(G_, B_, columns_[sub], sub, s.v, s.theta, dp_dth, dp_dv, dq_dth, dq_dv);
  dp = Eigen::VectorXd::Zero(state_size());
  dq = Eigen::VectorXd::Zero(state_size());
  for (int j : columns_[sub]) {
    dp(j) += dp_dv(j);
    dq(j) += dq_dv(j);
    if (angle_column_[j] >= 0) {
      dp(angle_column_[j]) += dp_dth(j);
      dq(angle_column_[j]) += dq_dth(j);
    }
  }
}

wls::WlsResult solve_dsse_from(const DsseModel& model, const Eigen::VectorXd& z, const Eigen::VectorXd& x0,
                               const DsseOptions& options) {
  return wls::gauss_newton(model, z, x0, {options.tolerance, options.max_iterations, {}});
}

wls::WlsResult solve_dsse(const DsseModel& model, const Eigen::VectorXd& z, const DsseOptions& options) {
  return solve_dsse_from(model, z, model.flat_start(), options);
}

HeadPower feeder_head_power(const Eigen::VectorXd& x, const DsseModel& model) {
  return ctdse::feeder_head_power(model.feeder(), model.voltages(x));
}

HeadPowerEstimate head_power_estimate(const wls::WlsResult& result, const DsseModel& model) {
  HeadPowerEstimate est;
  est.value = feeder_head_power(result.x, model);
  Eigen::VectorXd dp, dq;
  model.head_power_gradient(result.x, dp, dq);
  est.var_p = dp.dot(result.covariance * dp);
  est.var_q = dq.dot(result.covariance * dq);
  return est;
}

}  // namespace ctdse::dsse
