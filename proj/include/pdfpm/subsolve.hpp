#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "pdfpm/model.hpp"
#include "pdfpm/types.hpp"

namespace pdfpm {

// One proximal min-max subproblem, frozen at the center x^k:
//
//   minimize  max_j [ <g_j, s> + 1/2 <B_j s, s> + h_j(x^k + s) - h_j(x^k) ]
//             + sigma/2 ||s||^2        over  s = x - x^k.
//
// Box-preimage h terms are handled through their dual description: the
// epigraph form gains, per such objective, a variable w in R^{2n}, w >= 0,
// with cost delta <e, w> inside constraint j and the coupling
// A^T w = x^k + s for the stacked matrix A = [A~; -A~].
struct SubproblemData {
  Vector xk;
  double sigma = 1.0;
  std::vector<Vector> g;
  std::vector<Matrix> B;
  std::vector<NonsmoothSpec> h;
  Vector h_at_xk;

  int n() const { return static_cast<int>(xk.size()); }
  int m() const { return static_cast<int>(g.size()); }
};

inline SubproblemData assemble(Vector xk, double sigma, std::vector<Vector> g,
                               std::vector<Matrix> B,
                               std::vector<NonsmoothSpec> h, Vector h_at_xk) {
  if (!(sigma > 0.0)) throw ConfigError("assemble: sigma must be positive");
  const auto n = xk.size();
  const auto m = g.size();
  if (m == 0) throw ConfigError("assemble: no objectives");
  if (B.size() != m || h.size() != m ||
      static_cast<std::size_t>(h_at_xk.size()) != m)
    throw ConfigError("assemble: per-objective data sizes disagree");
  for (const auto& gj : g)
    if (gj.size() != n) throw ConfigError("assemble: gradient dimension mismatch");
  for (const auto& Bj : B) {
    if (Bj.rows() != n || Bj.cols() != n)
      throw ConfigError("assemble: scaling matrix dimension mismatch");
    if ((Bj - Bj.transpose()).norm() > 1e-9 * (1.0 + Bj.norm()))
      throw ConfigError("assemble: scaling matrix is not symmetric");
  }
  SubproblemData d;
  d.xk = std::move(xk);
  d.sigma = sigma;
  d.g = std::move(g);
  d.B = std::move(B);
  d.h = std::move(h);
  d.h_at_xk = std::move(h_at_xk);
  return d;
}

struct SubproblemResult {
  Vector xbar;
  // The displacement xbar - x^k carried at full precision.  Once sigma is
  // large the minimizer sits below the floating-point spacing of x^k, so
  // xbar alone cannot represent it; stopping rules and scaling updates must
  // read the step from here.
  Vector step;
  // sigma * ||step||, evaluated before undoing the internal rescaling.  The
  // stopping rule must use this: squaring the entries of a sufficiently
  // small step underflows, and the product sigma * ||step|| would then read
  // zero for a nonzero minimizer.
  double sigma_step_norm = 0.0;
  double tau = 0.0;              // min-max model value at xbar
  double objective_value = 0.0;  // tau + sigma/2 ||step||^2
  Vector gamma;                  // simplex weights, one per objective
  std::vector<Vector> w;         // dual blocks; empty for objectives without one
  std::vector<Vector> h_subgrad;  // subgradient of h_j at xbar backing gamma
  double kkt_residual = 0.0;
  bool polished = false;  // active-set refinement succeeded
  int outer_iters = 0;
  int newton_iters = 0;
  double gap = 0.0;  // (#inequalities)/t at the final barrier stage
};

// Weighted stationarity residual at (x^k + s, gamma) with explicit
// subgradient elements z_j of h_j there:
//   || sigma s + sum_j gamma_j [g_j + B_j s + z_j] ||.
inline double kkt_residual_at_step(const SubproblemData& d, const Vector& s,
                                   const Vector& gamma,
                                   const std::vector<Vector>& h_subgrad) {
  Vector r = d.sigma * s;
  for (int j = 0; j < d.m(); ++j)
    r += gamma[j] * (d.g[j] + h_subgrad[j] + d.B[j] * s);
  return r.norm();
}

// Same residual with the step recovered from xbar; fine whenever the step
// is well above the floating-point spacing of x^k.
inline double kkt_residual(const SubproblemData& d, const Vector& xbar,
                           const Vector& gamma,
                           const std::vector<Vector>& h_subgrad) {
  return kkt_residual_at_step(d, xbar - d.xk, gamma, h_subgrad);
}

// Same residual with the subgradients recovered pointwise from xbar (exact
// away from the kink set of each h_j).
inline double kkt_residual(const SubproblemData& d, const Vector& xbar,
                           const Vector& gamma) {
  std::vector<Vector> z(d.m());
  for (int j = 0; j < d.m(); ++j) z[j] = subgradient_h(d.h[j], xbar);
  return kkt_residual(d, xbar, gamma, z);
}

struct StartPoint {
  Vector x;
  double tau = 0.0;
  std::vector<Vector> w;  // empty for objectives without a dual block
};

namespace detail {

// Objectives get a dual block only when their h term actually contributes;
// a box-preimage spec with delta = 0 is identically zero and is treated as
// such.
inline bool has_dual_block(const NonsmoothSpec& spec) {
  return !spec.is_zero() && spec.delta() > 0.0;
}

}  // namespace detail

// Strictly feasible initial point: the center itself, dual blocks from the
// split of u = A~^{-T} x^k padded by eta, and tau one above the largest
// constraint value.
inline StartPoint feasible_start(const SubproblemData& d) {
  const double eta = 1e-3;
  StartPoint sp;
  sp.x = d.xk;
  sp.w.resize(d.m());
  double worst = 0.0;
  for (int j = 0; j < d.m(); ++j) {
    if (!detail::has_dual_block(d.h[j])) continue;
    const auto n = d.xk.size();
    Vector u = d.h[j].inv_transpose_apply(d.xk);
    Vector w(2 * n);
    w.head(n) = u.cwiseMax(0.0).array() + eta;
    w.tail(n) = (-u).cwiseMax(0.0).array() + eta;
    sp.w[j] = w;
    worst = std::max(worst, d.h[j].delta() * w.sum() - d.h_at_xk[j]);
  }
  sp.tau = worst + 1.0;
  return sp;
}

namespace detail {

// Internal barrier state: the stacked variable z = (s, tau, w-blocks) plus
// the fixed block layout.
struct BarrierLayout {
  int n = 0, m = 0;
  int nz = 0;           // total variable count
  int n_ineq = 0;       // epigraph constraints + nonnegativity bounds
  int n_eq = 0;
  std::vector<int> w_offset;  // per objective, -1 when absent
};

inline BarrierLayout make_layout(const SubproblemData& d) {
  BarrierLayout L;
  L.n = d.n();
  L.m = d.m();
  L.nz = L.n + 1;
  L.n_ineq = L.m;
  L.w_offset.assign(L.m, -1);
  for (int j = 0; j < L.m; ++j) {
    if (!has_dual_block(d.h[j])) continue;
    L.w_offset[j] = L.nz;
    L.nz += 2 * L.n;
    L.n_ineq += 2 * L.n;
    L.n_eq += L.n;
  }
  return L;
}

// Constraint slacks c_j(z) = tau - model_j(z); non-positive entries mean z
// is infeasible.
inline void slacks(const SubproblemData& d, const BarrierLayout& L,
                   const Vector& z, Vector& c) {
  const auto s = z.head(L.n);
  const double tau = z[L.n];
  for (int j = 0; j < L.m; ++j) {
    double q = d.g[j].dot(s) + 0.5 * s.dot(d.B[j] * s);
    if (L.w_offset[j] >= 0)
      q += d.h[j].delta() * z.segment(L.w_offset[j], 2 * L.n).sum() -
           d.h_at_xk[j];
    c[j] = tau - q;
  }
}

inline double barrier_value(const SubproblemData& d, const BarrierLayout& L,
                            double t, const Vector& z, Vector& c) {
  slacks(d, L, z, c);
  const auto s = z.head(L.n);
  double phi = t * (z[L.n] + 0.5 * d.sigma * s.squaredNorm());
  for (int j = 0; j < L.m; ++j) {
    if (c[j] <= 0.0) return std::numeric_limits<double>::infinity();
    phi -= std::log(c[j]);
  }
  for (int j = 0; j < L.m; ++j) {
    if (L.w_offset[j] < 0) continue;
    auto w = z.segment(L.w_offset[j], 2 * L.n);
    if ((w.array() <= 0.0).any()) return std::numeric_limits<double>::infinity();
    phi -= w.array().log().sum();
  }
  return phi;
}

// The barrier iterate stays strictly interior, so its step never lands
// exactly on a kink of h and its gamma never hits the simplex boundary.
// Both matter: the proximal loop's stopping rule wants steps that are
// genuinely zero at criticality, and robust minimizers routinely sit on
// kink manifolds.  The refinement below freezes the active structure read
// off the barrier point and re-solves the reduced KKT conditions with
// plain Newton:
//
//   sigma s + sum_{j in J} gamma_j (ghat_j + B_j s) + sum_{j,i} nu_ji q_ji = 0
//   <ghat_j, s> + 1/2 <B_j s, s> + const_j - tau = 0        (j in J)
//   <q_ji, x^k + s> = 0                                     (j in J, i kink)
//   sum_j gamma_j = 1
//
// where J holds the objectives whose epigraph constraint is tight, p_j is
// the frozen sign pattern of u_j = A~_j^{-T} x (zero on kinks),
// ghat_j = g_j + delta_j A~_j^{-1} p_j, const_j collects the affine offset
// of h_j under that pattern, and q_ji = A~_j^{-1} e_i.  nu_ji is the
// multiplier of the pinned kink component, bounded by gamma_j delta_j in
// magnitude at a valid solution.

struct PolishPlan {
  std::vector<int> J;
  std::vector<Vector> pattern;  // parallel to J; empty when no dual block
};

inline bool same_plan(const PolishPlan& x, const PolishPlan& y) {
  if (x.J != y.J) return false;
  for (std::size_t i = 0; i < x.pattern.size(); ++i) {
    if (x.pattern[i].size() != y.pattern[i].size()) return false;
    if ((x.pattern[i].array() != y.pattern[i].array()).any()) return false;
  }
  return true;
}

inline PolishPlan make_polish_plan(const SubproblemData& d, const Vector& xbar,
                                   const Vector& gamma, double gamma_cut,
                                   double kink_rel) {
  PolishPlan plan;
  for (int j = 0; j < d.m(); ++j)
    if (gamma[j] >= gamma_cut) plan.J.push_back(j);
  if (plan.J.empty()) {
    int jmax = 0;
    gamma.maxCoeff(&jmax);
    plan.J.push_back(jmax);
  }
  for (int j : plan.J) {
    if (!has_dual_block(d.h[j])) {
      plan.pattern.emplace_back();
      continue;
    }
    Vector v = d.h[j].inv_transpose_apply(xbar);
    const double kappa = kink_rel * (1.0 + v.cwiseAbs().maxCoeff());
    Vector p(v.size());
    for (int i = 0; i < v.size(); ++i)
      p[i] = std::abs(v[i]) <= kappa ? 0.0 : (v[i] > 0.0 ? 1.0 : -1.0);
    plan.pattern.push_back(std::move(p));
  }
  return plan;
}

struct Polished {
  Vector xbar;
  Vector step;
  Vector gamma;
  std::vector<Vector> h_subgrad;
  double tau = 0.0;
  double objective_value = 0.0;
};

// Newton-solves the frozen-structure system from the barrier point and
// validates the result (multiplier signs and bounds, pattern consistency,
// the guessed active set really attaining the max, and no increase of the
// exact objective).  Any failure returns nullopt and the caller keeps the
// barrier solution, so a wrong structural guess costs nothing.
inline std::optional<Polished> attempt_polish(const SubproblemData& d,
                                              const PolishPlan& plan,
                                              const Vector& s0, double tau0,
                                              const Vector& gamma0,
                                              double obj_barrier) {
  const int n = d.n();
  const int a = static_cast<int>(plan.J.size());

  std::vector<Vector> ghat(a);
  std::vector<double> cshift(a, 0.0);  // affine offset of the frozen model
  std::vector<std::vector<int>> kink(a);
  std::vector<std::vector<Vector>> q(a);
  int nnu = 0;
  for (int idx = 0; idx < a; ++idx) {
    const int j = plan.J[idx];
    ghat[idx] = d.g[j];
    cshift[idx] = -d.h_at_xk[j];
    if (plan.pattern[idx].size() > 0) {
      Vector ch = d.h[j].delta() * d.h[j].inv_apply(plan.pattern[idx]);
      ghat[idx] += ch;
      cshift[idx] += ch.dot(d.xk);
      for (int i = 0; i < n; ++i) {
        if (plan.pattern[idx][i] != 0.0) continue;
        kink[idx].push_back(i);
        q[idx].push_back(d.h[j].inv_apply(Vector::Unit(n, i)));
      }
      nnu += static_cast<int>(kink[idx].size());
    }
  }

  // Unknowns stacked as (s, tau, gamma_J, nu); the system is square.
  const int dim = n + 1 + a + nnu;
  Vector u(dim);
  u.head(n) = s0;
  u[n] = tau0;
  {
    double gs = 0.0;
    for (int idx = 0; idx < a; ++idx) gs += gamma0[plan.J[idx]];
    for (int idx = 0; idx < a; ++idx)
      u[n + 1 + idx] = gs > 0.0 ? gamma0[plan.J[idx]] / gs : 1.0 / a;
  }
  u.tail(nnu).setZero();

  auto residual = [&](const Vector& uu, Vector& R) {
    const auto s = uu.head(n);
    const double tau = uu[n];
    R.setZero();
    R.head(n) = d.sigma * s;
    int nu_at = n + 1 + a, row = n + a;
    double gsum = 0.0;
    for (int idx = 0; idx < a; ++idx) {
      const int j = plan.J[idx];
      const double gj = uu[n + 1 + idx];
      gsum += gj;
      Vector dq = ghat[idx] + d.B[j] * s;
      R.head(n) += gj * dq;
      R[n + idx] =
          ghat[idx].dot(s) + 0.5 * s.dot(d.B[j] * s) + cshift[idx] - tau;
      for (std::size_t kk = 0; kk < kink[idx].size(); ++kk, ++nu_at, ++row) {
        R.head(n) += uu[nu_at] * q[idx][kk];
        R[row] = q[idx][kk].dot(d.xk + s);
      }
    }
    R[dim - 1] = gsum - 1.0;
  };
  auto jacobian = [&](const Vector& uu, Matrix& Jm) {
    const auto s = uu.head(n);
    Jm.setZero();
    Jm.topLeftCorner(n, n) = d.sigma * Matrix::Identity(n, n);
    int nu_at = n + 1 + a, row = n + a;
    for (int idx = 0; idx < a; ++idx) {
      const int j = plan.J[idx];
      const double gj = uu[n + 1 + idx];
      Vector dq = ghat[idx] + d.B[j] * s;
      Jm.topLeftCorner(n, n) += gj * d.B[j];
      Jm.block(0, n + 1 + idx, n, 1) = dq;
      Jm.block(n + idx, 0, 1, n) = dq.transpose();
      Jm(n + idx, n) = -1.0;
      Jm(dim - 1, n + 1 + idx) = 1.0;
      for (std::size_t kk = 0; kk < kink[idx].size(); ++kk, ++nu_at, ++row) {
        Jm.block(0, nu_at, n, 1) = q[idx][kk];
        Jm.block(row, 0, 1, n) = q[idx][kk].transpose();
      }
    }
  };

  double scale = 1.0 + std::abs(tau0) + d.sigma * s0.norm();
  for (int idx = 0; idx < a; ++idx) {
    scale = std::max(scale, ghat[idx].norm());
    scale = std::max(scale, (ghat[idx] + d.B[plan.J[idx]] * s0).norm());
  }

  Vector R(dim), Rt(dim);
  Matrix Jm(dim, dim);
  residual(u, R);
  if (!R.allFinite()) return std::nullopt;
  Vector best_u = u;
  double best_norm = R.norm();
  for (int it = 0; it < 30 && best_norm > 1e-15 * scale; ++it) {
    jacobian(u, Jm);
    // Complete orthogonal decomposition gives a minimum-norm step even when
    // pinned kinks of different objectives duplicate rows.
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(Jm);
    Vector du = cod.solve(-R);
    if (!du.allFinite()) break;
    const double rn = R.norm();
    double step = 1.0;
    bool moved = false;
    for (int half = 0; half < 12 && !moved; ++half, step *= 0.5) {
      Vector ut = u + step * du;
      residual(ut, Rt);
      if (Rt.allFinite() && Rt.norm() < rn) {
        u = ut;
        R = Rt;
        moved = true;
      }
    }
    if (!moved) break;
    if (R.norm() < best_norm) {
      best_norm = R.norm();
      best_u = u;
    }
  }
  if (best_norm > 1e-11 * scale) return std::nullopt;
  u = best_u;

  // A step below the solver's own resolution is a genuine zero: land exactly
  // on the center, so the stopping rule and certificates see the fixed point
  // rather than linear-algebra noise.  Objectives that are steep at the
  // center (Holder exponents near zero) make the distinction matter.  The
  // zeroed step must reproduce the residual on its own, which keeps honest
  // small minimizers from being flattened.
  if (u.head(n).norm() <= 1e-15 * scale) {
    Vector u0 = u;
    u0.head(n).setZero();
    residual(u0, Rt);
    if (Rt.norm() <= std::max(best_norm, 1e-13 * scale)) u = u0;
  }

  // Multipliers: gamma nonnegative up to noise, kink multipliers inside
  // their box.
  Vector gamma_full = Vector::Zero(d.m());
  {
    int nu_at = n + 1 + a;
    for (int idx = 0; idx < a; ++idx) {
      const int j = plan.J[idx];
      double gj = u[n + 1 + idx];
      if (gj < -1e-9) return std::nullopt;
      gj = std::max(gj, 0.0);
      gamma_full[j] = gj;
      const double bound = d.h[j].delta() * gj * (1.0 + 1e-9) + 1e-12;
      for (std::size_t kk = 0; kk < kink[idx].size(); ++kk, ++nu_at)
        if (std::abs(u[nu_at]) > bound) return std::nullopt;
    }
    const double gs = gamma_full.sum();
    if (gs <= 0.0) return std::nullopt;
    gamma_full /= gs;
  }

  // The frozen patterns must describe the point we actually landed on.
  Vector xbar = d.xk + u.head(n);
  for (int idx = 0; idx < a; ++idx) {
    if (plan.pattern[idx].size() == 0) continue;
    Vector v = d.h[plan.J[idx]].inv_transpose_apply(xbar);
    const double vtol = 1e-9 * (1.0 + v.cwiseAbs().maxCoeff());
    for (int i = 0; i < n; ++i) {
      if (plan.pattern[idx][i] == 0.0) {
        if (std::abs(v[i]) > vtol) return std::nullopt;
      } else if (plan.pattern[idx][i] * v[i] < -vtol) {
        return std::nullopt;
      }
    }
  }

  // Exact model values: the guessed active set must attain the max, and the
  // refined point must not be worse than the barrier one.
  const auto snew = u.head(n);
  Vector psi(d.m());
  for (int j = 0; j < d.m(); ++j)
    psi[j] = d.g[j].dot(snew) + 0.5 * snew.dot(d.B[j] * snew) +
             eval_h(d.h[j], xbar) - d.h_at_xk[j];
  const double tau_ex = psi.maxCoeff();
  double tau_act = -std::numeric_limits<double>::infinity();
  for (int idx = 0; idx < a; ++idx)
    tau_act = std::max(tau_act, psi[plan.J[idx]]);
  if (tau_ex > tau_act + 1e-9 * (1.0 + std::abs(tau_ex))) return std::nullopt;
  const double obj = tau_ex + 0.5 * d.sigma * snew.squaredNorm();
  if (obj > obj_barrier + 1e-10 * (1.0 + std::abs(obj_barrier)))
    return std::nullopt;

  Polished out;
  out.xbar = std::move(xbar);
  out.step = snew;
  out.gamma = std::move(gamma_full);
  out.tau = tau_ex;
  out.objective_value = obj;
  out.h_subgrad.resize(d.m());
  {
    std::vector<bool> inJ(d.m(), false);
    int nu_at = n + 1 + a;
    for (int idx = 0; idx < a; ++idx) {
      const int j = plan.J[idx];
      inJ[j] = true;
      if (plan.pattern[idx].size() == 0) {
        out.h_subgrad[j] = Vector::Zero(n);
        continue;
      }
      const double del = d.h[j].delta();
      const double gj = out.gamma[j];
      Vector uvec = del * plan.pattern[idx];
      for (std::size_t kk = 0; kk < kink[idx].size(); ++kk, ++nu_at)
        if (gj > 0.0)
          uvec[kink[idx][kk]] = std::clamp(u[nu_at] / gj, -del, del);
      out.h_subgrad[j] = d.h[j].inv_apply(uvec);
    }
    for (int j = 0; j < d.m(); ++j)
      if (!inJ[j]) out.h_subgrad[j] = subgradient_h(d.h[j], out.xbar);
  }
  return out;
}

// Feasible-start path-following core: damped Newton steps on
// t * objective - sum log(slacks) over the affine set given by the dual
// couplings, barrier parameter scaled by 10 per stage, stages ending once
// the Newton decrement is negligible.  Stops after the gap bound
// (#inequalities)/t falls below tol, plus one extra stage of polish so the
// reported minimizer is comfortably inside the tolerance.  Expects data
// whose proximal weight is moderate; the public solve() below normalizes.
inline SubproblemResult solve_centered(const SubproblemData& d,
                                       double tol = 1e-9) {
  using detail::BarrierLayout;
  const BarrierLayout L = detail::make_layout(d);
  const int n = L.n, m = L.m;

  // Stack the start point into z.
  StartPoint sp = feasible_start(d);
  Vector z = Vector::Zero(L.nz);
  z[n] = sp.tau;
  for (int j = 0; j < m; ++j)
    if (L.w_offset[j] >= 0) z.segment(L.w_offset[j], 2 * n) = sp.w[j];

  // Equality rows A~^T (w+ - w-) - s = x^k, constant throughout.
  Matrix E = Matrix::Zero(L.n_eq, L.nz);
  {
    int r = 0;
    for (int j = 0; j < m; ++j) {
      if (L.w_offset[j] < 0) continue;
      E.block(r, 0, n, n) = -Matrix::Identity(n, n);
      E.block(r, L.w_offset[j], n, n) = d.h[j].atilde().transpose();
      E.block(r, L.w_offset[j] + n, n, n) = -d.h[j].atilde().transpose();
      r += n;
    }
  }

  const int kkt_dim = L.nz + L.n_eq;
  Matrix K(kkt_dim, kkt_dim);
  Vector rhs(kkt_dim), c(m), grad(L.nz), dz;
  Eigen::PartialPivLU<Matrix> lu;

  SubproblemResult res;
  double t = 1.0;
  int gap_met_stages = 0;

  for (int outer = 0;; ++outer) {
    if (outer >= 60)
      throw SubproblemFailure("barrier stage cap exceeded",
                              d.xk + z.head(n), grad.norm());
    ++res.outer_iters;

    bool centered = true;
    for (int inner = 0;; ++inner) {
      if (inner >= 250) {
        centered = false;
        break;
      }
      ++res.newton_iters;

      detail::slacks(d, L, z, c);
      const auto s = z.head(n);

      grad.setZero();
      K.setZero();
      auto Hss = K.topLeftCorner(n, n);
      Hss.diagonal().array() += t * d.sigma;
      grad.head(n) += t * d.sigma * s;
      grad[n] = t;

      for (int j = 0; j < m; ++j) {
        const double ci = 1.0 / c[j];
        Vector dq = d.g[j] + d.B[j] * s;
        grad.head(n) += ci * dq;
        grad[n] -= ci;

        Hss += ci * d.B[j] + (ci * ci) * (dq * dq.transpose());
        K.block(0, n, n, 1) -= (ci * ci) * dq;
        K(n, n) += ci * ci;

        if (L.w_offset[j] >= 0) {
          const int o = L.w_offset[j];
          const double del = d.h[j].delta();
          auto w = z.segment(o, 2 * n);
          grad.segment(o, 2 * n) =
              Vector::Constant(2 * n, ci * del) - w.cwiseInverse();

          K.block(0, o, n, 2 * n) +=
              (ci * ci * del) * dq * Eigen::RowVectorXd::Ones(2 * n);
          K.block(n, o, 1, 2 * n).array() -= ci * ci * del;
          K.block(o, o, 2 * n, 2 * n).array() += ci * ci * del * del;
          K.block(o, o, 2 * n, 2 * n).diagonal() +=
              w.cwiseAbs2().cwiseInverse();
        }
      }
      // Mirror the upper triangle and append the equality rows.
      for (int r = 0; r < L.nz; ++r)
        for (int col = r + 1; col < L.nz; ++col) K(col, r) = K(r, col);
      if (L.n_eq > 0) {
        K.block(L.nz, 0, L.n_eq, L.nz) = E;
        K.block(0, L.nz, L.nz, L.n_eq) = E.transpose();
      }

      rhs.head(L.nz) = -grad;
      rhs.tail(L.n_eq).setZero();
      lu.compute(K);
      dz = lu.solve(rhs).head(L.nz);

      double dec2 = std::max(0.0, -grad.dot(dz));
      if (0.5 * dec2 <= 1e-12) break;

      // Fraction-to-boundary on the bound constraints, then backtracking
      // until strictly feasible and sufficiently decreased.  Near machine
      // resolution the decrease test is waived rather than looping forever.
      double alpha = 1.0;
      for (int j = 0; j < m; ++j) {
        if (L.w_offset[j] < 0) continue;
        const int o = L.w_offset[j];
        for (int i = 0; i < 2 * n; ++i)
          if (dz[o + i] < 0.0)
            alpha = std::min(alpha, -0.99 * z[o + i] / dz[o + i]);
      }

      Vector ctrial(m);
      double phi0 = detail::barrier_value(d, L, t, z, ctrial);
      double slope = grad.dot(dz);
      double slack = 8.0 * std::numeric_limits<double>::epsilon() *
                     (1.0 + std::abs(phi0));
      bool moved = false;
      double achieved = 0.0;
      while (alpha > 1e-18) {
        Vector zt = z + alpha * dz;
        double phi1 = detail::barrier_value(d, L, t, zt, ctrial);
        if (phi1 <= phi0 + 0.01 * alpha * slope + slack) {
          achieved = phi0 - phi1;
          z = zt;
          moved = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!moved) break;          // numerical floor of this stage
      if (achieved <= slack) break;  // progress below float resolution
    }

    if (!centered) {
      // The stage ran out its Newton budget, which happens when a dual
      // component creeps toward its bound and the fraction-to-boundary rule
      // clips every step.  The iterate is still strictly feasible, so stop
      // tightening here and let the refinement below judge the point; the
      // reported residual stays honest either way.
      res.gap = static_cast<double>(L.n_ineq) / t;
      break;
    }

    if (static_cast<double>(L.n_ineq) / t <= tol) {
      if (++gap_met_stages >= 2) {
        res.gap = static_cast<double>(L.n_ineq) / t;
        break;
      }
    }
    t *= 10.0;
  }

  // Unpack and report against the exact model (not the barrier's tau, which
  // sits slightly above it).
  Vector s = z.head(n);
  res.xbar = d.xk + s;
  res.step = s;
  detail::slacks(d, L, z, c);

  res.gamma.resize(m);
  for (int j = 0; j < m; ++j) res.gamma[j] = std::max(0.0, 1.0 / (t * c[j]));
  double gsum = res.gamma.sum();
  if (gsum > 0.0) res.gamma /= gsum;

  res.w.resize(m);
  for (int j = 0; j < m; ++j)
    if (L.w_offset[j] >= 0) res.w[j] = z.segment(L.w_offset[j], 2 * n);

  double phi_max = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < m; ++j) {
    double v = d.g[j].dot(s) + 0.5 * s.dot(d.B[j] * s) +
               eval_h(d.h[j], res.xbar) - d.h_at_xk[j];
    phi_max = std::max(phi_max, v);
  }
  res.tau = phi_max;
  res.objective_value = phi_max + 0.5 * d.sigma * s.squaredNorm();

  // Active-set refinement.  Guess the tight constraints and kink components
  // from the barrier point, loosest kink classification first, then widen or
  // narrow the guess; the first refinement that validates wins.
  {
    std::vector<detail::PolishPlan> plans;
    plans.push_back(detail::make_polish_plan(d, res.xbar, res.gamma, 1e-6, 1e-4));
    plans.push_back(detail::make_polish_plan(d, res.xbar, res.gamma, 1e-6, 1e-8));
    plans.push_back(detail::make_polish_plan(d, res.xbar, res.gamma, -1.0, 1e-4));
    plans.push_back(detail::make_polish_plan(d, res.xbar, res.gamma, 2.0, 1e-4));
    for (std::size_t pi = 0; pi < plans.size() && !res.polished; ++pi) {
      bool dup = false;
      for (std::size_t pj = 0; pj < pi && !dup; ++pj)
        dup = detail::same_plan(plans[pi], plans[pj]);
      if (dup) continue;
      auto pol = detail::attempt_polish(d, plans[pi], s, res.tau, res.gamma,
                                        res.objective_value);
      if (!pol) continue;
      res.xbar = pol->xbar;
      res.step = pol->step;
      res.gamma = pol->gamma;
      res.h_subgrad = std::move(pol->h_subgrad);
      res.tau = pol->tau;
      res.objective_value = pol->objective_value;
      res.polished = true;
      // Dual blocks re-split from u = A~^{-T} xbar: exactly feasible and
      // attaining h, unlike the padded barrier w.
      for (int j = 0; j < m; ++j) {
        if (L.w_offset[j] < 0) continue;
        Vector uj = d.h[j].inv_transpose_apply(res.xbar);
        res.w[j].head(n) = uj.cwiseMax(0.0);
        res.w[j].tail(n) = (-uj).cwiseMax(0.0);
      }
    }
  }
  if (!res.polished) {
    res.h_subgrad.resize(m);
    for (int j = 0; j < m; ++j)
      res.h_subgrad[j] = subgradient_h(d.h[j], res.xbar);
  }
  res.kkt_residual = kkt_residual_at_step(d, res.step, res.gamma, res.h_subgrad);
  res.sigma_step_norm = d.sigma * res.step.norm();
  return res;
}

}  // namespace detail

// Solves the subproblem.  The variables are first rescaled to v = sigma s
// (equivalently, the center moves to sigma x^k, the scaling matrices become
// B_j / sigma and the proximal weight drops to one): the box-preimage h
// terms are positively homogeneous, so the model transforms exactly, and
// the rescaled system stays well-conditioned no matter how far the doubling
// loop has pushed sigma.  Since sigma only ever doubles, dividing the
// solution back is exact in floating point for power-of-two starts.
inline SubproblemResult solve(const SubproblemData& d, double tol = 1e-9) {
  if (d.sigma == 1.0) return detail::solve_centered(d, tol);

  // Deep in a doubling cascade the minimizer is confined to the ball
  // ||s|| <= 2 max_j ||g_j + z_j|| / sigma around x^k, z_j the pointwise
  // subgradient of h_j there.  Once no component of u_j = A~_j^{-T} x can
  // change sign over that ball, every box-preimage term is linear on it, and
  // replacing h_j by <z_j, .> is exact.  That removes the dual blocks, whose
  // slack rows would otherwise subtract sigma-scale quantities and run out
  // of precision once sigma reaches ~1e10.
  if (d.sigma > 1e4) {
    const int n = d.n(), m = d.m();
    bool any_dual = false;
    for (int j = 0; j < m; ++j) any_dual = any_dual || detail::has_dual_block(d.h[j]);
    if (any_dual) {
      std::vector<Vector> z(m);
      double gmax = 0.0;
      for (int j = 0; j < m; ++j) {
        z[j] = subgradient_h(d.h[j], d.xk);
        gmax = std::max(gmax, (d.g[j] + z[j]).norm());
      }
      const double radius = 2.0 * gmax / d.sigma;
      bool linear = true;
      for (int j = 0; j < m && linear; ++j) {
        if (!detail::has_dual_block(d.h[j])) continue;
        Vector uk = d.h[j].inv_transpose_apply(d.xk);
        // ||A~^{-T} s||_inf <= (max abs row sum of A~^{-T}) ||s||; the row
        // sums come from applying the factorization to basis vectors.
        Vector rowsum = Vector::Zero(n);
        for (int i = 0; i < n; ++i)
          rowsum += d.h[j].inv_transpose_apply(Vector::Unit(n, i)).cwiseAbs();
        double umin = uk.cwiseAbs().minCoeff();
        linear = umin > 10.0 * rowsum.maxCoeff() * radius && umin > 0.0;
      }
      if (linear) {
        SubproblemData dl;
        dl.xk = d.xk;
        dl.sigma = d.sigma;
        dl.g.resize(m);
        for (int j = 0; j < m; ++j) dl.g[j] = d.g[j] + z[j];
        dl.B = d.B;
        dl.h.assign(m, NonsmoothSpec::zero());
        dl.h_at_xk = Vector::Zero(m);
        SubproblemResult res = solve(dl, tol);
        // The model values, weights and residual transfer unchanged: on the
        // linearity ball the replaced model coincides with the original, and
        // the residual's g~_j = g_j + z_j matches reporting z_j as the
        // subgradient.  Only the dual split has to be rebuilt.
        res.h_subgrad = std::move(z);
        for (int j = 0; j < m; ++j) {
          if (!detail::has_dual_block(d.h[j])) continue;
          Vector uj = d.h[j].inv_transpose_apply(res.xbar);
          res.w[j].resize(2 * n);
          res.w[j].head(n) = uj.cwiseMax(0.0);
          res.w[j].tail(n) = (-uj).cwiseMax(0.0);
        }
        return res;
      }
    }
  }

  SubproblemData dv;
  dv.xk = d.sigma * d.xk;
  dv.sigma = 1.0;
  dv.g = d.g;
  dv.B.reserve(d.B.size());
  for (const auto& Bj : d.B) dv.B.push_back(Bj / d.sigma);
  dv.h = d.h;
  dv.h_at_xk = d.sigma * d.h_at_xk;

  SubproblemResult res;
  try {
    res = detail::solve_centered(dv, tol);
  } catch (const SubproblemFailure& e) {
    throw SubproblemFailure(e.what(), d.xk + (e.last_x - dv.xk) / d.sigma,
                            e.residual);
  }

  // Map back: the step, model value and duals scale by 1/sigma; the simplex
  // weights, subgradients, the stationarity residual
  // || sigma s + sum gamma (g + B s + z) || and sigma * ||step|| (computed in
  // the rescaled variables, where it cannot underflow) are invariant.
  res.step /= d.sigma;
  res.xbar = d.xk + res.step;
  res.tau /= d.sigma;
  res.objective_value /= d.sigma;
  res.gap /= d.sigma;
  for (auto& wj : res.w)
    if (wj.size() > 0) wj /= d.sigma;
  return res;
}

}  // namespace pdfpm
