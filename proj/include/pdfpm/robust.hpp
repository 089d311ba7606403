#pragma once

#include <cstdint>
#include <vector>

#include "pdfpm/model.hpp"
#include "pdfpm/random.hpp"
#include "pdfpm/types.hpp"

namespace pdfpm {

// Sampled uncertainty directions: one square matrix per objective, entries
// uniform in [0, 1), redrawn until comfortably nonsingular.
struct UncertaintySpec {
  std::uint64_t seed = 0;
  std::vector<Matrix> atilde;
};

inline UncertaintySpec gen_uncertainty(int n, int m, std::uint64_t seed) {
  if (n < 1 || m < 1) throw ConfigError("gen_uncertainty: need n, m >= 1");
  UncertaintySpec u;
  u.seed = seed;
  Rng rng(seed);
  for (int j = 0; j < m; ++j) {
    Matrix A(n, n);
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      for (int r = 0; r < n; ++r)
        for (int col = 0; col < n; ++col) A(r, col) = rng.uniform01();
      ok = std::abs(A.determinant()) >= 1e-8;
    }
    if (!ok)
      throw ConfigError("gen_uncertainty: could not draw a nonsingular matrix");
    u.atilde.push_back(std::move(A));
  }
  return u;
}

// Attaches the worst-case uncertainty terms to a smooth base problem:
// objective j becomes f_j(x) + delta * ||A~_j^{-T} x||_1, the support
// function of the box preimage.  delta = 0 keeps the objective values of
// the base problem everywhere.
inline ProblemSpec robustify(const ProblemSpec& base, const UncertaintySpec& u,
                             double delta) {
  base.validate();
  if (delta < 0.0) throw ConfigError("robustify: delta must be >= 0");
  if (static_cast<int>(u.atilde.size()) != base.m())
    throw ConfigError("robustify: one matrix per objective required");
  for (const auto& s : base.h)
    if (!s.is_zero())
      throw ConfigError("robustify: base problem must have zero h terms");

  ProblemSpec out = base;
  out.h.clear();
  for (const auto& A : u.atilde)
    out.h.push_back(NonsmoothSpec::box_preimage(A, delta));
  out.validate();
  return out;
}

}  // namespace pdfpm
