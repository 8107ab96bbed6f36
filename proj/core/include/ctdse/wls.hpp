#pragma once

#include <functional>
#include <vector>

#include <Eigen/Core>

namespace ctdse::wls {

/// z = h(x) + e with a diagonal weight matrix W = R^-1.
class MeasurementModel {
 public:
  virtual ~MeasurementModel() = default;

  virtual Eigen::Index state_size() const = 0;
  virtual Eigen::Index measurement_size() const = 0;
  virtual Eigen::VectorXd evaluate(const Eigen::VectorXd& x) const = 0;
  /// Analytic dh/dx, measurement_size() x state_size().
  virtual Eigen::MatrixXd jacobian(const Eigen::VectorXd& x) const = 0;
  /// Diagonal of W.
  virtual const Eigen::VectorXd& weights() const = 0;
};

struct WlsResult {
  Eigen::VectorXd x;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  Eigen::MatrixXd gain;
  Eigen::MatrixXd covariance;
  /// J(x) before the first step and after every step.
  std::vector<double> objective_history;
  /// ||dx||_inf of every step.
  std::vector<double> step_norms;
  /// Set when J rose across any accepted step.
  bool objective_increased = false;
};

struct GaussNewtonOptions {
  double tolerance = 1e-4;
  int max_iterations = 50;
  /// Called with (iteration, x, J) for the start point (iteration 0) and after every step.
  std::function<void(int, const Eigen::VectorXd&, double)> on_iterate;
};

/// J = (z - h(x))' W (z - h(x)).
double objective(const MeasurementModel& model, const Eigen::VectorXd& z, const Eigen::VectorXd& x);
double objective(const Eigen::VectorXd& residual, const Eigen::VectorXd& weights);

/// One-shot solve of (H'WH) x = H'Wz; throws UnobservableError on rank deficiency.
WlsResult linear_wls(const Eigen::MatrixXd& H, const Eigen::VectorXd& z, const Eigen::VectorXd& weights);

/// Undamped Gauss-Newton. Stops once ||dx||_inf < tolerance or after max_iterations,
/// in which case the last iterate is returned with converged = false.
WlsResult gauss_newton(const MeasurementModel& model, const Eigen::VectorXd& z, const Eigen::VectorXd& x0,
                       const GaussNewtonOptions& options = {});

/// G^-1 for a symmetric positive definite gain matrix.
Eigen::MatrixXd covariance(const Eigen::MatrixXd& gain);

/// Numerical rank of sqrt(W) H, tolerance 1e-8 * ||H||.
Eigen::Index observable_rank(const Eigen::MatrixXd& H, const Eigen::VectorXd& weights);

/// Solves the normal equations G dx = rhs given H and W. Uses a Cholesky
/// factorization of G and falls back to a pivoted QR of sqrt(W) H when the
/// reciprocal condition estimate drops below 1e-12.
Eigen::VectorXd solve_normal_equations(const Eigen::MatrixXd& H, const Eigen::VectorXd& weights,
                                       const Eigen::VectorXd& residual, Eigen::MatrixXd* gain_out = nullptr);

}  // namespace ctdse::wls
