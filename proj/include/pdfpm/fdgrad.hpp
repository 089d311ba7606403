#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "pdfpm/model.hpp"
#include "pdfpm/types.hpp"

namespace pdfpm {

enum class GradientMode { Forward, Backward, Central, Analytic };

inline std::string to_string(GradientMode m) {
  switch (m) {
    case GradientMode::Forward: return "forward";
    case GradientMode::Backward: return "backward";
    case GradientMode::Central: return "central";
    case GradientMode::Analytic: return "analytic";
  }
  return "?";
}

inline GradientMode grad_mode_from_string(const std::string& s) {
  if (s == "forward") return GradientMode::Forward;
  if (s == "backward") return GradientMode::Backward;
  if (s == "central") return GradientMode::Central;
  if (s == "analytic") return GradientMode::Analytic;
  throw ConfigError("unknown gradient mode: " + s);
}

// Bounds on the sampling radius.  The floor deliberately defaults to 0: the
// method's theory wants lambda <= eps/(sigma sqrt(n)) untouched, and raising
// the floor trades that guarantee for less cancellation noise.
struct LambdaPolicy {
  double floor = 0.0;
  double cap = std::numeric_limits<double>::infinity();
};

struct StepSize {
  double lambda = 0.0;
  // Raised when cancellation is likely (lambda below 2^-26) or when the
  // floor overrode the theoretical bound.
  bool flagged = false;
};

// Sampling radius for one outer iteration: eps/(sigma sqrt(n)) clamped to
// the policy interval.
inline StepSize lambda_step(double eps, double sigma, int n,
                            const LambdaPolicy& policy = {}) {
  if (!(eps > 0.0)) throw ConfigError("lambda_step: eps must be positive");
  if (!(sigma > 0.0)) throw ConfigError("lambda_step: sigma must be positive");
  if (n < 1) throw ConfigError("lambda_step: n must be at least 1");
  if (!(policy.floor >= 0.0) || !(policy.floor <= policy.cap))
    throw ConfigError("lambda_step: need 0 <= floor <= cap");

  double bound = eps / (sigma * std::sqrt(static_cast<double>(n)));
  StepSize out;
  out.lambda = std::min(std::max(bound, policy.floor), policy.cap);
  out.flagged = out.lambda < 0x1p-26 || policy.floor > bound;
  return out;
}

// One-sided or central difference approximation of the gradient of f at x.
// Forward/Backward evaluate f once at x and once per coordinate; Central
// evaluates twice per coordinate and never at x itself.
inline Vector approx_grad(const std::function<double(const Vector&)>& f,
                          const Vector& x, double lambda, GradientMode mode) {
  if (!(lambda > 0.0)) throw ConfigError("approx_grad: lambda must be positive");
  if (mode == GradientMode::Analytic)
    throw ConfigError("approx_grad: analytic mode has no sampling rule");

  const auto n = x.size();
  Vector g(n);
  Vector xp = x;
  if (mode == GradientMode::Central) {
    for (Eigen::Index i = 0; i < n; ++i) {
      xp[i] = x[i] + lambda;
      double fp = f(xp);
      xp[i] = x[i] - lambda;
      double fm = f(xp);
      xp[i] = x[i];
      g[i] = (fp - fm) / (2.0 * lambda);
    }
  } else {
    double base = f(x);
    double sign = mode == GradientMode::Forward ? 1.0 : -1.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      xp[i] = x[i] + sign * lambda;
      g[i] = sign * (f(xp) - base) / lambda;
      xp[i] = x[i];
    }
  }
  return g;
}

// Per-objective gradient surrogates at x.  Analytic mode requires every
// objective to carry a gradient callback.
inline std::vector<Vector> gradient_vector(const ProblemSpec& p, const Vector& x,
                                           double lambda, GradientMode mode) {
  std::vector<Vector> g;
  g.reserve(p.m());
  for (int j = 0; j < p.m(); ++j) {
    if (mode == GradientMode::Analytic) {
      if (!p.objectives[j].grad)
        throw ConfigError("analytic gradients requested but objective " +
                          std::to_string(j) + " has none");
      g.push_back(p.objectives[j].grad(x));
    } else {
      const auto& f = p.objectives[j].eval;
      g.push_back(approx_grad(f, x, lambda, mode));
    }
    if (!g.back().allFinite())
      throw EvaluationError("gradient surrogate is non-finite", j, x);
  }
  return g;
}

}  // namespace pdfpm
