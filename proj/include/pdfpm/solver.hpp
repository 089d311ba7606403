#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "pdfpm/fdgrad.hpp"
#include "pdfpm/model.hpp"
#include "pdfpm/scaling.hpp"
#include "pdfpm/subsolve.hpp"
#include "pdfpm/types.hpp"

namespace pdfpm {

struct SolverConfig {
  double alpha = 0.1;   // descent-test fraction
  double eps = 1e-10;   // stopping tolerance
  double sigma0 = 1.0;  // initial proximal weight
  int max_iter = 100;   // cap on accepted steps
  GradientMode grad_mode = GradientMode::Central;
  LambdaPolicy lambda_policy{};
  BStrategy b_strategy = BStrategy::Bfgs;
  double b_bound = 1e4;
  double subproblem_tol = 1e-9;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0))
      throw ConfigError("config: alpha must lie in (0, 1)");
    if (!(eps > 0.0 && eps < 1.0))
      throw ConfigError("config: eps must lie in (0, 1)");
    if (!(sigma0 >= 1.0)) throw ConfigError("config: sigma0 must be >= 1");
    if (max_iter < 1) throw ConfigError("config: max_iter must be >= 1");
    if (!(b_bound > 0.0)) throw ConfigError("config: b_bound must be positive");
    if (!(subproblem_tol > 0.0))
      throw ConfigError("config: subproblem_tol must be positive");
  }
};

enum class RunStatus { Converged, MaxIterExceeded, SubproblemFailed };

inline std::string to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Converged: return "converged";
    case RunStatus::MaxIterExceeded: return "max_iter";
    case RunStatus::SubproblemFailed: return "subproblem_failed";
  }
  return "?";
}

// One subproblem solve, accepted or not.
struct IterationRecord {
  int k = 0;   // accepted steps taken before this solve
  Vector x;    // center x^k
  double sigma = 0.0;
  double lambda = 0.0;
  bool lambda_flagged = false;
  bool accepted = false;
  double norm_s = 0.0;      // ||xbar - x^k||
  double sub_objective = 0.0;  // optimal subproblem value (<= 0 at exactness)
  Vector F;                 // F(x^k)
  Vector gamma;
  double kkt_residual = 0.0;
  double gap = 0.0;
  int outer_iters = 0;
  int newton_iters = 0;
  // Whether an accepted decrease met the worst-case per-step minimum; -1
  // when smoothness metadata was unavailable.
  int min_decrease_met = -1;
};

struct RunResult {
  RunStatus status = RunStatus::MaxIterExceeded;
  Vector x;  // final point: the trial point on convergence
  Vector F;
  int iterations = 0;  // accepted steps
  int subproblem_solves = 0;
  int sigma_doublings = 0;
  double sigma_final = 0.0;
  Vector gamma_final;
  // h-subgradient elements certified by the converging subproblem.
  std::vector<Vector> h_subgrad_final;
  double certificate = std::numeric_limits<double>::quiet_NaN();
  std::vector<IterationRecord> trace;
};

// Sufficient-decrease test: every objective must drop by at least
// alpha * eps^2 / (2 sigma).  Compared exactly, with no extra slack.
inline bool descent_test(const Vector& F_old, const Vector& F_new, double alpha,
                         double eps, double sigma) {
  double required = alpha * eps * eps / (2.0 * sigma);
  // Compare achieved decrease against the threshold rather than F_new
  // against a shifted F_old: the subtraction of nearby values is exact, so
  // an unchanged objective is rejected even when the threshold is far below
  // the spacing of F itself.
  for (Eigen::Index j = 0; j < F_old.size(); ++j)
    if (!(F_old[j] - F_new[j] >= required)) return false;
  return true;
}

// Weighted-gradient residual at the final point of a converged run, using
// the best gradient available (analytic when present, otherwise a central
// difference with a fixed moderate radius).  The h terms enter through the
// subgradient elements certified by the final subproblem; at a kink the
// pointwise recovery cannot see the balancing element, so it is only the
// fallback for hand-built results.
inline double stationarity_certificate(const RunResult& res,
                                       const ProblemSpec& p) {
  if (res.status != RunStatus::Converged)
    throw UsageError("certificate requires a converged run");
  const bool certified =
      res.h_subgrad_final.size() == static_cast<std::size_t>(p.m());
  Vector acc = Vector::Zero(p.n);
  for (int j = 0; j < p.m(); ++j) {
    Vector gj = p.objectives[j].grad
                    ? p.objectives[j].grad(res.x)
                    : approx_grad(p.objectives[j].eval, res.x, 1e-7,
                                  GradientMode::Central);
    Vector zj = certified ? res.h_subgrad_final[j]
                          : subgradient_h(p.h[j], res.x);
    acc += res.gamma_final[j] * (gj + zj);
  }
  return acc.norm();
}

namespace detail {

// Worst-case per-step decrease constant from the smoothness metadata; the
// trace marks accepted steps against alpha * eps^((beta+1)/beta) / (2c).
inline double min_decrease_threshold(const ProblemSpec& p, double alpha,
                                     double eps, double b_bound) {
  double c = 0.0, beta_min = 1.0;
  for (const auto& obj : p.objectives) {
    if (!obj.holder) return -1.0;
    const auto& hm = *obj.holder;
    double nn = static_cast<double>(p.n);
    double term = (2.0 * hm.L + b_bound) / (1.0 - alpha) +
                  (2.0 * std::pow(nn, (1.0 - hm.beta) / 2.0) * hm.M +
                   2.0 * hm.M) /
                      ((hm.beta + 1.0) * (1.0 - alpha));
    c = std::max(c, std::pow(term, 1.0 / hm.beta));
    beta_min = std::min(beta_min, hm.beta);
  }
  c *= 2.0;
  return alpha * std::pow(eps, (beta_min + 1.0) / beta_min) / (2.0 * c);
}

}  // namespace detail

// Runs the partially derivative-free proximal method from x0.  Each pass
// builds gradient surrogates at the current center, solves the proximal
// min-max subproblem, and either stops (short step), accepts the trial point
// (sufficient decrease in every objective), or doubles sigma and retries.
inline RunResult run(const ProblemSpec& p, const Vector& x0,
                     const SolverConfig& cfg) {
  cfg.validate();
  p.validate();
  if (x0.size() != p.n) throw ConfigError("run: x0 dimension mismatch");

  const int m = p.m();
  RunResult res;
  Vector x = x0;
  double sigma = cfg.sigma0;

  ScalingState scaling = init_scaling(p.n, m, cfg.b_strategy, cfg.b_bound);
  const double min_dec =
      detail::min_decrease_threshold(p, cfg.alpha, cfg.eps, cfg.b_bound);

  // Component values at the center; h is cached for reuse by the subproblem.
  Vector h_x(m), F_x(m);
  for (int j = 0; j < m; ++j) {
    h_x[j] = eval_h(p.h[j], x);
    F_x[j] = eval_smooth(p, j, x) + h_x[j];
  }

  StepSize step;
  std::vector<Vector> g;
  bool have_grad = false;
  int k = 0;

  const int solve_budget = 10 * cfg.max_iter;
  while (true) {
    if (k >= cfg.max_iter || res.subproblem_solves >= solve_budget) {
      res.status = RunStatus::MaxIterExceeded;
      break;
    }

    if (!have_grad) {
      step = lambda_step(cfg.eps, sigma, p.n, cfg.lambda_policy);
      g = gradient_vector(p, x, step.lambda, cfg.grad_mode);
      have_grad = true;
    }

    SubproblemData data = assemble(x, sigma, g, scaling.B, p.h, h_x);
    IterationRecord rec;
    rec.k = k;
    rec.x = x;
    rec.sigma = sigma;
    rec.lambda = step.lambda;
    rec.lambda_flagged = step.flagged;
    rec.F = F_x;

    SubproblemResult sub;
    try {
      sub = solve(data, cfg.subproblem_tol);
    } catch (const SubproblemFailure&) {
      bool dual = false;
      for (const auto& spec : p.h) dual = dual || detail::has_dual_block(spec);
      if (dual && sigma >= 1e10) {
        // A barrier breakdown this deep in a rejection cascade is part of a
        // stall, not a solver verdict: any step at this sigma sits below the
        // resolution of F, so the descent test could only reject it, and a
        // genuinely short step would have stopped the run back when sigma
        // was still moderate.  Burn budget like any other rejection.
        rec.gamma = Vector::Zero(m);
        rec.norm_s = std::numeric_limits<double>::quiet_NaN();
        rec.kkt_residual = std::numeric_limits<double>::quiet_NaN();
        res.trace.push_back(std::move(rec));
        ++res.subproblem_solves;
        sigma = std::min(2.0 * sigma, 1e300);
        ++res.sigma_doublings;
        have_grad = false;
        continue;
      }
      res.status = RunStatus::SubproblemFailed;
      rec.gamma = Vector::Zero(m);
      res.trace.push_back(std::move(rec));
      ++res.subproblem_solves;
      break;
    }
    ++res.subproblem_solves;

    // The subproblem carries its step exactly; xbar - x would round it away
    // once sigma is large enough that the step sits below the spacing of x.
    Vector s = sub.step;
    rec.norm_s = sub.sigma_step_norm / sigma;
    rec.sub_objective = sub.objective_value;
    rec.gamma = sub.gamma;
    rec.kkt_residual = sub.kkt_residual;
    rec.gap = sub.gap;
    rec.outer_iters = sub.outer_iters;
    rec.newton_iters = sub.newton_iters;

    // Deep rejection cascades push ||step|| below the underflow threshold of
    // a squared norm, so the test reads the product from the subproblem
    // rather than recomputing sigma * ||s||.
    if (sub.sigma_step_norm < cfg.eps) {
      res.trace.push_back(std::move(rec));
      res.status = RunStatus::Converged;
      x = sub.xbar;
      res.gamma_final = sub.gamma;
      res.h_subgrad_final = std::move(sub.h_subgrad);
      break;
    }

    Vector h_new(m), F_new(m);
    for (int j = 0; j < m; ++j) {
      h_new[j] = eval_h(p.h[j], sub.xbar);
      F_new[j] = eval_smooth(p, j, sub.xbar) + h_new[j];
    }

    if (descent_test(F_x, F_new, cfg.alpha, cfg.eps, sigma)) {
      rec.accepted = true;
      if (min_dec > 0.0)
        rec.min_decrease_met = (F_x - F_new).minCoeff() >= min_dec ? 1 : 0;

      // Gradients at the accepted point double as the next pass's
      // surrogates: sigma is unchanged, so the sampling radius is too.
      std::vector<Vector> g_new =
          gradient_vector(p, sub.xbar, step.lambda, cfg.grad_mode);
      if (cfg.b_strategy == BStrategy::Bfgs) {
        std::vector<Vector> y(m);
        for (int j = 0; j < m; ++j) y[j] = g_new[j] - g[j];
        update(scaling, s, y);
      }
      g = std::move(g_new);
      x = sub.xbar;
      h_x = h_new;
      F_x = F_new;
      ++k;
    } else {
      // Keep sigma finite under arbitrarily long rejection cascades; at this
      // magnitude the run is only burning its solve budget anyway.
      sigma = std::min(2.0 * sigma, 1e300);
      ++res.sigma_doublings;
      have_grad = false;  // the sampling radius shrank with sigma
    }
    res.trace.push_back(std::move(rec));
  }

  res.x = x;
  res.F = eval_F(p, x);
  res.iterations = k;
  res.sigma_final = sigma;
  if (res.status == RunStatus::Converged)
    res.certificate = stationarity_certificate(res, p);
  return res;
}

namespace detail {

// Decimal form with enough digits to round-trip exactly.
inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// Iteration trace as CSV: one row per subproblem solve.
inline void write_trace_csv(const RunResult& res, std::ostream& out) {
  const auto mm = res.F.size();
  out << "k,sigma,lambda,accepted,norm_s";
  for (Eigen::Index j = 0; j < mm; ++j) out << ",F_" << (j + 1);
  for (Eigen::Index j = 0; j < mm; ++j) out << ",gamma_" << (j + 1);
  out << "\n";
  for (const auto& r : res.trace) {
    out << r.k << ',' << detail::fmt(r.sigma) << ',' << detail::fmt(r.lambda)
        << ',' << (r.accepted ? 1 : 0) << ',' << detail::fmt(r.norm_s);
    for (Eigen::Index j = 0; j < mm; ++j) out << ',' << detail::fmt(r.F[j]);
    for (Eigen::Index j = 0; j < mm; ++j)
      out << ',' << detail::fmt(j < r.gamma.size() ? r.gamma[j] : 0.0);
    out << "\n";
  }
}

}  // namespace pdfpm
