#pragma once

#include <string>
#include <vector>

#include "pdfpm/types.hpp"

namespace pdfpm {

enum class BStrategy { Bfgs, Identity, Zero };

inline std::string to_string(BStrategy s) {
  switch (s) {
    case BStrategy::Bfgs: return "bfgs";
    case BStrategy::Identity: return "identity";
    case BStrategy::Zero: return "zero";
  }
  return "?";
}

inline BStrategy b_strategy_from_string(const std::string& s) {
  if (s == "bfgs") return BStrategy::Bfgs;
  if (s == "identity") return BStrategy::Identity;
  if (s == "zero") return BStrategy::Zero;
  throw ConfigError("unknown scaling strategy: " + s);
}

// Per-objective curvature matrices B_j used inside the subproblem model.
struct ScalingState {
  BStrategy strategy = BStrategy::Bfgs;
  double bound = 1e4;  // Frobenius cap; updates that exceed it are rejected
  std::vector<Matrix> B;
};

inline ScalingState init_scaling(int n, int m, BStrategy strategy,
                                 double bound = 1e4) {
  if (n < 1 || m < 1) throw ConfigError("init_scaling: need n >= 1, m >= 1");
  if (!(bound > 0.0)) throw ConfigError("init_scaling: bound must be positive");
  ScalingState st;
  st.strategy = strategy;
  st.bound = bound;
  st.B.assign(m, strategy == BStrategy::Zero ? Matrix(Matrix::Zero(n, n))
                                             : Matrix(Matrix::Identity(n, n)));
  return st;
}

// Quasi-Newton refresh after an accepted step s with per-objective gradient
// displacements y_j.  The curvature pair is used only when it is safe:
// s^T y_j < 0 leaves B_j untouched (the secant term would break positive
// semidefiniteness), a vanishing s^T B_j s or an update that exceeds the
// Frobenius cap likewise keeps the previous matrix.  The rank-one secant
// term is dropped when s^T y_j is positive but too small to divide by.
inline void update(ScalingState& st, const Vector& s,
                   const std::vector<Vector>& y) {
  if (st.strategy != BStrategy::Bfgs) return;
  if (y.size() != st.B.size())
    throw ConfigError("scaling update: one displacement per objective required");

  for (std::size_t j = 0; j < st.B.size(); ++j) {
    Matrix& B = st.B[j];
    double sy = s.dot(y[j]);
    if (sy < 0.0) continue;
    Vector Bs = B * s;
    double sBs = s.dot(Bs);
    if (sBs <= 1e-14) continue;

    Matrix next = B - (Bs * Bs.transpose()) / sBs;
    if (sy > 1e-14) next += (y[j] * y[j].transpose()) / sy;
    next = 0.5 * (next + next.transpose());

    if (next.norm() > st.bound) continue;
    B = next;
  }
}

}  // namespace pdfpm
