#pragma once

#include <stdexcept>
#include <string>

namespace ctdse {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input: case files, plans, configs.
class InputError : public Error {
 public:
  enum class Code {
    parse,
    duplicate_bus_id,
    disconnected,
    zero_impedance,
    self_loop,
    not_radial,
    unknown_bus,
    unknown_branch,
    unknown_field,
    missing_boundary_link,
    boundary_bus_missing,
    invalid_base,
    invalid_plan,
    invalid_config,
    dimension_mismatch,
    invalid_sigma,
  };

  InputError(Code code, std::string location, const std::string& what)
      : Error(location.empty() ? what : location + ": " + what),
        code_(code),
        location_(std::move(location)) {}

  Code code() const noexcept { return code_; }
  const std::string& location() const noexcept { return location_; }

 private:
  Code code_;
  std::string location_;
};

/// Solver failures: divergence, singular gain, unobservable plans.
class NumericalError : public Error {
 public:
  enum class Code {
    diverged,
    singular_gain,
    unobservable,
    indefinite,
  };

  NumericalError(Code code, const std::string& what) : Error(what), code_(code) {}

  Code code() const noexcept { return code_; }

 private:
  Code code_;
};

/// Raised by linear solves whose design matrix lacks full column rank.
class UnobservableError : public NumericalError {
 public:
  UnobservableError(long rank, long columns)
      : NumericalError(Code::unobservable,
                       "measurement model is unobservable: rank " + std::to_string(rank) + " of " +
                           std::to_string(columns) + " states (deficiency " +
                           std::to_string(columns - rank) + ")"),
        rank_(rank),
        columns_(columns) {}

  /// Size of a maximal observable subset of the state.
  long rank() const noexcept { return rank_; }
  long deficiency() const noexcept { return columns_ - rank_; }

 private:
  long rank_;
  long columns_;
};

}  // namespace ctdse
