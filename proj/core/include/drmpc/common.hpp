#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <stdexcept>
#include <string>

namespace drmpc {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (dimension mismatch, NaN, ranges).
class InputError : public Error {
 public:
  using Error::Error;
};

/// A configuration that cannot be run (schema violation, infeasible setup).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A numerical routine failed to deliver a certified answer.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// No feasible control action exists, not even the fallback.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

/// A rollout exceeded its step cap without reaching the target.
class NonConvergenceError : public Error {
 public:
  using Error::Error;
};

/// A file could not be read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InputError(message);
}

}  // namespace drmpc
