#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "ctdse/network.hpp"

namespace ctdse::detail {

/// Net injections P_i, Q_i in polar form; `columns` lists the nonzeros of row i of Y.
inline void injection(const Eigen::MatrixXd& G, const Eigen::MatrixXd& B, const std::vector<int>& columns, int i,
                      const Eigen::VectorXd& v, const Eigen::VectorXd& th, double& p, double& q) {
  p = 0.0;
  q = 0.0;
  for (int j : columns) {
    const double a = th(i) - th(j);
    const double c = std::cos(a);
    const double s = std::sin(a);
    p += v(j) * (G(i, j) * c + B(i, j) * s);
    q += v(j) * (G(i, j) * s - B(i, j) * c);
  }
  p *= v(i);
  q *= v(i);
}

/// Partials of P_i and Q_i with respect to every theta_j and v_j.
/// Only entries listed in `columns` are written; outputs must be sized n and zeroed.
inline void injection_partials(const Eigen::MatrixXd& G, const Eigen::MatrixXd& B, const std::vector<int>& columns,
                               int i, const Eigen::VectorXd& v, const Eigen::VectorXd& th, Eigen::VectorXd& dp_dth,
                               Eigen::VectorXd& dp_dv, Eigen::VectorXd& dq_dth, Eigen::VectorXd& dq_dv) {
  double p = 0.0;
  double q = 0.0;
  injection(G, B, columns, i, v, th, p, q);
  for (int j : columns) {
    if (j == i) continue;
    const double a = th(i) - th(j);
    const double c = std::cos(a);
    const double s = std::sin(a);
    const double gc_bs = G(i, j) * c + B(i, j) * s;
    const double gs_bc = G(i, j) * s - B(i, j) * c;
    dp_dth(j) = v(i) * v(j) * gs_bc;
    dp_dv(j) = v(i) * gc_bs;
    dq_dth(j) = -v(i) * v(j) * gc_bs;
    dq_dv(j) = v(i) * gs_bc;
  }
  const double vi = v(i);
  dp_dth(i) = -q - B(i, i) * vi * vi;
  dp_dv(i) = p / vi + G(i, i) * vi;
  dq_dth(i) = p - G(i, i) * vi * vi;
  dq_dv(i) = q / vi - B(i, i) * vi;
}

/// Sparsity pattern of Y as per-row column lists (diagonal included).
struct AdmittancePattern {
  Eigen::MatrixXd G;
  Eigen::MatrixXd B;
  std::vector<std::vector<int>> columns;

  explicit AdmittancePattern(const AdmittanceMatrix& adm) : G(adm.G()), B(adm.B()), columns(adm.size()) {
    for (int i = 0; i < adm.size(); ++i) {
      for (int j = 0; j < adm.size(); ++j) {
        if (i == j || adm.Y(i, j) != Complex(0.0, 0.0)) columns[i].push_back(j);
      }
    }
  }

  int size() const { return static_cast<int>(columns.size()); }

  void injection(int i, const Eigen::VectorXd& v, const Eigen::VectorXd& th, double& p, double& q) const {
    detail::injection(G, B, columns[i], i, v, th, p, q);
  }

  void injection_partials(int i, const Eigen::VectorXd& v, const Eigen::VectorXd& th, Eigen::VectorXd& dp_dth,
                          Eigen::VectorXd& dp_dv, Eigen::VectorXd& dq_dth, Eigen::VectorXd& dq_dv) const {
    detail::injection_partials(G, B, columns[i], i, v, th, dp_dth, dp_dv, dq_dth, dq_dv);
  }
};

}  // namespace ctdse::detail
