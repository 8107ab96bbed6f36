#include "ctdse/wls.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include "ctdse/errors.hpp"

namespace ctdse::wls {

namespace {

constexpr double kMinReciprocalCondition = 1e-12;
constexpr double kRankTolerance = 1e-8;

void check_dimensions(const MeasurementModel& model, const Eigen::VectorXd& z, const Eigen::VectorXd& x) {
  if (z.size() != model.measurement_size() || x.size() != model.state_size() ||
      model.weights().size() != model.measurement_size()) {
    throw InputError(InputError::Code::dimension_mismatch, "wls",
                     "model is " + std::to_string(model.measurement_size()) + "x" + std::to_string(model.state_size()) +
                         ", got z of " + std::to_string(z.size()) + " and x of " + std::to_string(x.size()));
  }
}

Eigen::MatrixXd weighted_gain(const Eigen::MatrixXd& H, const Eigen::VectorXd& weights) {
  Eigen::MatrixXd G = H.transpose() * weights.asDiagonal() * H;
  return (G + G.transpose()) * 0.5;
}

}  // namespace

double objective(const Eigen::VectorXd& residual, const Eigen::VectorXd& weights) {
  if (residual.size() != weights.size()) {
    throw InputError(InputError::Code::dimension_mismatch, "wls", "residual and weight sizes differ");
  }
  return residual.dot(weights.cwiseProduct(residual));
}

double objective(const MeasurementModel& model, const Eigen::VectorXd& z, const Eigen::VectorXd& x) {
  check_dimensions(model, z, x);
  return objective(z - model.evaluate(x), model.weights());
}

Eigen::Index observable_rank(const Eigen::MatrixXd& H, const Eigen::VectorXd& weights) {
  (void)weights;
  if (H.cols() == 0) return 0;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(H);
  const double norm = H.norm();
  if (norm == 0.0) return 0;
  // Absolute threshold kRankTolerance * ||H||, expressed relative to the largest pivot.
  const double max_pivot = qr.maxPivot();
  qr.setThreshold(kRankTolerance * norm / max_pivot);
  return qr.rank();
}

Eigen::VectorXd solve_normal_equations(const Eigen::MatrixXd& H, const Eigen::VectorXd& weights,
                                       const Eigen::VectorXd& residual, Eigen::MatrixXd* gain_out) {
  Eigen::MatrixXd G = weighted_gain(H, weights);
  const Eigen::VectorXd rhs = H.transpose() * weights.cwiseProduct(residual);
  Eigen::LLT<Eigen::MatrixXd> llt(G);
  if (gain_out) *gain_out = G;
  if (llt.info() == Eigen::Success && llt.rcond() >= kMinReciprocalCondition) {
    return llt.solve(rhs);
  }
  const Eigen::VectorXd sqrt_w = weights.cwiseSqrt();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(sqrt_w.asDiagonal() * H);
  if (qr.rank() < H.cols()) {
    throw NumericalError(NumericalError::Code::singular_gain,
                         "gain matrix is singular (rank " + std::to_string(qr.rank()) + " of " +
                             std::to_string(H.cols()) + ")");
  }
  return qr.solve(sqrt_w.cwiseProduct(residual));
}

Eigen::MatrixXd covariance(const Eigen::MatrixXd& gain) {
  if (gain.rows() != gain.cols()) {
    throw InputError(InputError::Code::dimension_mismatch, "covariance", "gain matrix is not square");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(gain);
  if (llt.info() != Eigen::Success) {
    throw NumericalError(NumericalError::Code::indefinite, "gain matrix is not positive definite");
  }
  Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(gain.rows(), gain.cols()));
  return (inv + inv.transpose()) * 0.5;
}

WlsResult linear_wls(const Eigen::MatrixXd& H, const Eigen::VectorXd& z, const Eigen::VectorXd& weights) {
  if (H.rows() != z.size() || weights.size() != z.size()) {
    throw InputError(InputError::Code::dimension_mismatch, "linear_wls", "H, z and W disagree in row count");
  }
  const Eigen::Index rank = observable_rank(H, weights);
  if (rank < H.cols()) throw UnobservableError(rank, H.cols());

  WlsResult result;
  result.x = solve_normal_equations(H, weights, z, &result.gain);
  result.covariance = covariance(result.gain);
  result.objective = objective(z - H * result.x, weights);
  result.objective_history = {result.objective};
  result.iterations = 1;
  result.converged = true;
  return result;
}

WlsResult gauss_newton(const MeasurementModel& model, const Eigen::VectorXd& z, const Eigen::VectorXd& x0,
                       const GaussNewtonOptions& options) {
  check_dimensions(model, z, x0);
  if (!(options.tolerance > 0.0)) {
    throw InputError(InputError::Code::invalid_config, "gauss_newton", "tolerance must be positive");
  }
  if (!x0.allFinite()) throw InputError(InputError::Code::invalid_config, "gauss_newton", "initial state is not finite");

  const Eigen::VectorXd& w = model.weights();
  WlsResult result;
  result.x = x0;
  Eigen::VectorXd r = z - model.evaluate(result.x);
  double J = objective(r, w);
  result.objective_history.push_back(J);
  if (options.on_iterate) options.on_iterate(0, result.x, J);

  for (int it = 1; it <= options.max_iterations; ++it) {
    const Eigen::MatrixXd H = model.jacobian(result.x);
    const Eigen::VectorXd dx = solve_normal_equations(H, w, r);
    if (!dx.allFinite()) {
      throw NumericalError(NumericalError::Code::diverged, "Gauss-Newton step is not finite");
    }
    result.x += dx;
    r = z - model.evaluate(result.x);
    const double next = objective(r, w);
    if (next > J * (1.0 + 1e-9) + 1e-12) result.objective_increased = true;
    J = next;
    result.objective_history.push_back(J);
    const double step = dx.lpNorm<Eigen::Infinity>();
    result.step_norms.push_back(step);
    result.iterations = it;
    if (options.on_iterate) options.on_iterate(it, result.x, J);
    if (step < options.tolerance) {
      result.converged = true;
      break;
    }
  }

  result.objective = J;
  const Eigen::MatrixXd H = model.jacobian(result.x);
  result.gain = weighted_gain(H, w);
  result.covariance = covariance(result.gain);
  return result;
}

}  // namespace ctdse::wls
