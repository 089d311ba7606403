#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pdfpm/random.hpp"
#include "pdfpm/types.hpp"

namespace pdfpm {

// Smoothness metadata: gradient Lipschitz constant L (0 if none holds),
// Holder constant M and exponent beta in (0, 1].  Only consumed by
// diagnostics; the solver itself never needs it.
struct HolderMeta {
  double L = 0.0;
  double M = 0.0;
  double beta = 1.0;
};

// One smooth objective f_j.  The analytic gradient is optional; when absent
// the solver falls back to finite differences.
struct SmoothObjective {
  std::function<double(const Vector&)> eval;
  std::function<Vector(const Vector&)> grad;  // may be empty
  std::optional<HolderMeta> holder;
};

// Nonsmooth part h_j of a composite objective.  Either identically zero or
// the support function of the box preimage Z = { z : -delta*e <= A~ z <= delta*e },
// which evaluates to delta * ||A~^{-T} x||_1.
class NonsmoothSpec {
 public:
  enum class Kind { Zero, BoxPreimageSupport };

  NonsmoothSpec() = default;

  static NonsmoothSpec zero() { return NonsmoothSpec(); }

  static NonsmoothSpec box_preimage(Matrix atilde, double delta) {
    if (delta < 0.0) throw ConfigError("box_preimage: delta must be >= 0");
    if (atilde.rows() != atilde.cols() || atilde.rows() == 0)
      throw ConfigError("box_preimage: Atilde must be square");
    // Nonsingularity check on the row-equilibrated matrix so the threshold
    // is scale-free.
    Matrix scaled = atilde;
    for (Eigen::Index i = 0; i < scaled.rows(); ++i) {
      double r = scaled.row(i).cwiseAbs().maxCoeff();
      if (r == 0.0) throw ConfigError("box_preimage: Atilde has a zero row");
      scaled.row(i) /= r;
    }
    if (std::abs(scaled.determinant()) <= 1e-12)
      throw ConfigError("box_preimage: Atilde is numerically singular");

    NonsmoothSpec s;
    s.kind_ = Kind::BoxPreimageSupport;
    s.delta_ = delta;
    s.atilde_ = std::move(atilde);
    s.lu_a_.compute(s.atilde_);
    s.lu_at_.compute(s.atilde_.transpose());
    return s;
  }

  Kind kind() const { return kind_; }
  bool is_zero() const { return kind_ == Kind::Zero; }
  double delta() const { return delta_; }
  const Matrix& atilde() const { return atilde_; }

  // Solves A~^T u = x.
  Vector inv_transpose_apply(const Vector& x) const { return lu_at_.solve(x); }
  // Solves A~ z = v.
  Vector inv_apply(const Vector& v) const { return lu_a_.solve(v); }

 private:
  Kind kind_ = Kind::Zero;
  double delta_ = 0.0;
  Matrix atilde_;
  Eigen::PartialPivLU<Matrix> lu_a_;
  Eigen::PartialPivLU<Matrix> lu_at_;
};

// h_j(x).
inline double eval_h(const NonsmoothSpec& spec, const Vector& x) {
  if (spec.is_zero()) return 0.0;
  return spec.delta() * spec.inv_transpose_apply(x).lpNorm<1>();
}

// A subgradient of h_j at x: the maximizer of <x, z> over Z, which is
// A~^{-1} (delta * sign(A~^{-T} x)) with ties resolved to 0.
inline Vector subgradient_h(const NonsmoothSpec& spec, const Vector& x) {
  if (spec.is_zero()) return Vector::Zero(x.size());
  Vector u = spec.inv_transpose_apply(x);
  Vector v(u.size());
  for (Eigen::Index i = 0; i < u.size(); ++i)
    v[i] = u[i] > 0.0 ? spec.delta() : (u[i] < 0.0 ? -spec.delta() : 0.0);
  return spec.inv_apply(v);
}

// A composite multiobjective problem min F(x), F_j = f_j + h_j, plus the box
// that starting points are drawn from.
struct ProblemSpec {
  std::string name;
  int n = 0;
  std::vector<SmoothObjective> objectives;
  std::vector<NonsmoothSpec> h;
  Vector start_lo, start_hi;

  int m() const { return static_cast<int>(objectives.size()); }

  void validate() const {
    if (n <= 0) throw ConfigError("problem: n must be positive");
    if (objectives.empty()) throw ConfigError("problem: no objectives");
    if (h.size() != objectives.size())
      throw ConfigError("problem: one nonsmooth spec per objective required");
    if (start_lo.size() != n || start_hi.size() != n)
      throw ConfigError("problem: start box must have n bounds");
    for (int i = 0; i < n; ++i)
      if (!(start_lo[i] <= start_hi[i]))
        throw ConfigError("problem: empty start box");
    for (const auto& s : h)
      if (!s.is_zero() && s.atilde().rows() != n)
        throw ConfigError("problem: Atilde dimension mismatch");
  }
};

inline double eval_smooth(const ProblemSpec& p, int j, const Vector& x) {
  double v = p.objectives[j].eval(x);
  if (!std::isfinite(v))
    throw EvaluationError("objective returned non-finite value", j, x);
  return v;
}

// F(x) componentwise.
inline Vector eval_F(const ProblemSpec& p, const Vector& x) {
  Vector out(p.m());
  for (int j = 0; j < p.m(); ++j) {
    out[j] = eval_smooth(p, j, x) + eval_h(p.h[j], x);
    if (!std::isfinite(out[j]))
      throw EvaluationError("composite value is non-finite", j, x);
  }
  return out;
}

// Gradient of (mu/p) ||D(x - c)||_p^p, i.e. mu * D^T s with
// s_i = sign(v_i) |v_i|^(p-1), v = D(x - c).
inline Vector grad_p_norm(const Matrix& D, const Vector& c, double mu,
                          double p, const Vector& x) {
  Vector v = D * (x - c);
  Vector s(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    double a = std::abs(v[i]);
    s[i] = a == 0.0 ? 0.0 : (v[i] > 0.0 ? 1.0 : -1.0) * std::pow(a, p - 1.0);
  }
  return mu * (D.transpose() * s);
}

namespace detail {

inline double spectral_norm(const Matrix& A) {
  return A.jacobiSvd().singularValues()[0];
}

inline SmoothObjective make_quadratic(Matrix A, Vector b) {
  SmoothObjective f;
  double L = spectral_norm(A.transpose() * A);
  f.holder = HolderMeta{L, L, 1.0};
  f.eval = [A, b](const Vector& x) { return 0.5 * (A * x - b).squaredNorm(); };
  f.grad = [A, b](const Vector& x) -> Vector {
    return A.transpose() * (A * x - b);
  };
  return f;
}

inline SmoothObjective make_p_norm(Matrix D, Vector c, double mu, double p) {
  if (!(p > 1.0 && p <= 2.0))
    throw ConfigError("p-norm objective requires p in (1, 2]");
  SmoothObjective f;
  double q = p - 1.0;
  double n = static_cast<double>(D.cols());
  // Holder constant of the composed gradient: mu ||D||^(1+q) 2^(1-q) n^((1-q)/2).
  double M = mu * std::pow(spectral_norm(D), 1.0 + q) * std::pow(2.0, 1.0 - q) *
             std::pow(n, (1.0 - q) / 2.0);
  f.holder = HolderMeta{0.0, M, q};
  f.eval = [D, c, mu, p](const Vector& x) {
    return (mu / p) * (D * (x - c)).array().abs().pow(p).sum();
  };
  f.grad = [D, c, mu, p](const Vector& x) { return grad_p_norm(D, c, mu, p, x); };
  return f;
}

}  // namespace detail

// Biobjective preset: a strongly convex quadratic against a nearly-l1
// p-norm term, starting box [-2, 2]^2.
inline ProblemSpec make_aas1() {
  ProblemSpec p;
  p.name = "aas1";
  p.n = 2;
  Matrix A(2, 2);
  A << 2.0, 0.5, 0.5, 1.5;
  Vector b(2);
  b << 1.0, -0.5;
  Matrix D(2, 2);
  D << 1.0, 0.8, 0.3, 1.2;
  p.objectives.push_back(detail::make_quadratic(A, b));
  p.objectives.push_back(detail::make_p_norm(D, Vector::Zero(2), 0.9, 1.003));
  p.h.assign(2, NonsmoothSpec::zero());
  p.start_lo = Vector::Constant(2, -2.0);
  p.start_hi = Vector::Constant(2, 2.0);
  p.validate();
  return p;
}

// Biobjective preset: two shifted p-norm terms with distinct anisotropies,
// starting box [-5, 5]^2.
inline ProblemSpec make_aas2() {
  ProblemSpec p;
  p.name = "aas2";
  p.n = 2;
  Matrix D1(2, 2), D2(2, 2);
  D1 << 1.2, -0.3, 0.4, 1.5;
  D2 << 1.8, 0.5, -0.2, 1.1;
  Vector c1(2), c2(2);
  c1 << 1.5, -1.0;
  c2 << -1.2, 0.8;
  p.objectives.push_back(detail::make_p_norm(D1, c1, 1.2, 1.003));
  p.objectives.push_back(detail::make_p_norm(D2, c2, 0.8, 1.002));
  p.h.assign(2, NonsmoothSpec::zero());
  p.start_lo = Vector::Constant(2, -5.0);
  p.start_hi = Vector::Constant(2, 5.0);
  p.validate();
  return p;
}

// Uniform draw from the start box.
inline Vector sample_start(const ProblemSpec& p, Rng& rng) {
  Vector x(p.n);
  for (int i = 0; i < p.n; ++i) x[i] = rng.uniform(p.start_lo[i], p.start_hi[i]);
  return x;
}

namespace detail {

inline Matrix matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) throw ConfigError("expected a matrix");
  auto rows = static_cast<Eigen::Index>(j.size());
  auto cols = static_cast<Eigen::Index>(j[0].size());
  Matrix A(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[r].size()) != cols)
      throw ConfigError("ragged matrix rows");
    for (Eigen::Index c = 0; c < cols; ++c) A(r, c) = j[r][c].get<double>();
  }
  return A;
}

inline Vector vector_from_json(const nlohmann::json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

}  // namespace detail

// Builds a problem from a config document.  Schema:
//
//   {
//     "name": "custom",                    (optional)
//     "n": 2,
//     "start_box": [[lo_1, hi_1], ...],
//     "objectives": [
//       {"type": "quadratic", "A": [[...]], "b": [...]},
//       {"type": "pnorm", "D": [[...]], "c": [...], "mu": 0.9, "p": 1.003}
//     ],
//     "h": [                               (optional, defaults to zero)
//       {"type": "zero"},
//       {"type": "box_preimage", "Atilde": [[...]], "delta": 0.1}
//     ]
//   }
inline ProblemSpec problem_from_json(const nlohmann::json& doc) {
  try {
    ProblemSpec p;
    p.name = doc.value("name", std::string("custom"));
    p.n = doc.at("n").get<int>();

    const auto& box = doc.at("start_box");
    p.start_lo.resize(p.n);
    p.start_hi.resize(p.n);
    if (static_cast<int>(box.size()) != p.n)
      throw ConfigError("start_box must list one [lo, hi] pair per dimension");
    for (int i = 0; i < p.n; ++i) {
      p.start_lo[i] = box[i].at(0).get<double>();
      p.start_hi[i] = box[i].at(1).get<double>();
    }

    for (const auto& obj : doc.at("objectives")) {
      std::string type = obj.at("type").get<std::string>();
      if (type == "quadratic") {
        p.objectives.push_back(detail::make_quadratic(
            detail::matrix_from_json(obj.at("A")),
            detail::vector_from_json(obj.at("b"))));
      } else if (type == "pnorm") {
        p.objectives.push_back(detail::make_p_norm(
            detail::matrix_from_json(obj.at("D")),
            detail::vector_from_json(obj.at("c")), obj.at("mu").get<double>(),
            obj.at("p").get<double>()));
      } else {
        throw ConfigError("unknown objective type: " + type);
      }
    }

    if (doc.contains("h")) {
      for (const auto& hj : doc.at("h")) {
        std::string type = hj.at("type").get<std::string>();
        if (type == "zero") {
          p.h.push_back(NonsmoothSpec::zero());
        } else if (type == "box_preimage") {
          p.h.push_back(NonsmoothSpec::box_preimage(
              detail::matrix_from_json(hj.at("Atilde")),
              hj.at("delta").get<double>()));
        } else {
          throw ConfigError("unknown nonsmooth type: " + type);
        }
      }
    } else {
      p.h.assign(p.objectives.size(), NonsmoothSpec::zero());
    }

    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("problem config: ") + e.what());
  }
}

}  // namespace pdfpm
