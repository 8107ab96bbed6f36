#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>

#include <Eigen/Core>

#include "ctdse/case_io.hpp"
#include "ctdse/network.hpp"
#include "ctdse/wls.hpp"

namespace test {

inline std::filesystem::path data_dir() { return CTDSE_DATA_DIR; }
inline std::filesystem::path desk_case() { return data_dir() / "desk" / "desk.json"; }
inline std::filesystem::path t30_case() { return data_dir() / "t30" / "t30.json"; }

/// Writes `content` to a scratch file under the test output directory.
inline std::filesystem::path scratch_file(const std::string& name, const std::string& content) {
  const std::filesystem::path dir = std::filesystem::path(CTDSE_TEST_OUT_DIR) / "scratch";
  std::filesystem::create_directories(dir);
  const auto path = dir / name;
  std::ofstream(path, std::ios::binary) << content;
  return path;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::path(CTDSE_TEST_OUT_DIR) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Central differences of f at x with step h.
inline Eigen::MatrixXd fd_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double h = 1e-6) {
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd J(f0.size(), x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    Eigen::VectorXd xp = x, xm = x;
    xp(j) += h;
    xm(j) -= h;
    J.col(j) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return J;
}

/// Max over entries of |a - b| / max(|b|, floor).
inline double max_relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double floor = 1.0) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      worst = std::max(worst, std::abs(a(i, j) - b(i, j)) / std::max(std::abs(b(i, j)), floor));
    }
  }
  return worst;
}

inline ctdse::Bus bus(int id, double load_p = 0.0, double load_q = 0.0) {
  ctdse::Bus b;
  b.id = id;
  b.load_p = load_p;
  b.load_q = load_q;
  return b;
}

inline ctdse::Branch branch(int from, int to, double r, double x, double b_sh = 0.0, double tap = 1.0) {
  ctdse::Branch br;
  br.from = from;
  br.to = to;
  br.r = r;
  br.x = x;
  br.b_sh = b_sh;
  br.tap = tap;
  return br;
}

/// Two buses joined by one branch; bus 0 is the slack.
inline ctdse::NetworkCase two_bus(double r, double x, double load_p, double load_q, double b_sh = 0.0) {
  ctdse::NetworkCase c;
  c.name = "two-bus";
  c.buses = {bus(0), bus(1, load_p, load_q)};
  c.branches = {branch(0, 1, r, x, b_sh)};
  return c;
}

/// Random radial feeder with inductive branches and positive loads.
inline ctdse::NetworkCase random_feeder(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ctdse::NetworkCase c;
  c.name = "random-feeder";
  c.buses.push_back(bus(0));
  for (int b = 1; b < n; ++b) {
    c.buses.push_back(bus(b, 0.005 + 0.02 * u(rng), 0.002 + 0.01 * u(rng)));
    const int parent = static_cast<int>(u(rng) * b);
    c.branches.push_back(branch(parent, b, 0.005 + 0.02 * u(rng), 0.01 + 0.03 * u(rng)));
  }
  return c;
}

inline ctdse::LoadedIntegratedCase load_desk() { return ctdse::load_integrated(desk_case()); }
inline ctdse::LoadedIntegratedCase load_t30() { return ctdse::load_integrated(t30_case()); }

}  // namespace test
