#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace pdfpm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Configuration or input that violates a documented precondition.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// An objective oracle returned a non-finite value.
struct EvaluationError : std::runtime_error {
  int objective;
  Vector point;
  EvaluationError(const std::string& msg, int j, Vector x)
      : std::runtime_error(msg), objective(j), point(std::move(x)) {}
};

// The inner QP solver exhausted its iteration budget.  Carries the last
// iterate so callers can report where progress stalled.
struct SubproblemFailure : std::runtime_error {
  Vector last_x;
  double residual;
  SubproblemFailure(const std::string& msg, Vector x, double r)
      : std::runtime_error(msg), last_x(std::move(x)), residual(r) {}
};

// An operation was invoked on a result that does not support it.
struct UsageError : std::logic_error {
  explicit UsageError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace pdfpm
