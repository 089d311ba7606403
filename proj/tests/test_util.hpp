#pragma once

// Shared oracles and helpers for the test suites.  Everything here is
// deliberately independent of the library internals: brute force, vertex
// enumeration, and dense grids stand in for the clever implementations they
// check.

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pdfpm/model.hpp"
#include "pdfpm/random.hpp"
#include "pdfpm/types.hpp"

namespace testutil {

using pdfpm::Matrix;
using pdfpm::Rng;
using pdfpm::Vector;

// Wraps a callable and counts invocations; remembers whether any call hit
// the base point exactly.
struct CountingFn {
  std::function<double(const Vector&)> f;
  Vector base;
  mutable int calls = 0;
  mutable int base_calls = 0;

  double operator()(const Vector& x) const {
    ++calls;
    if (x.size() == base.size() && (x - base).norm() == 0.0) ++base_calls;
    return f(x);
  }
};

inline Matrix random_symmetric(int n, Rng& rng, double scale = 1.0) {
  Matrix A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = rng.uniform(-scale, scale);
  return 0.5 * (A + A.transpose());
}

inline Matrix random_psd(int n, Rng& rng, double scale = 1.0) {
  Matrix A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = rng.uniform(-scale, scale);
  return A.transpose() * A / static_cast<double>(n);
}

inline Vector random_vector(int n, Rng& rng, double lo, double hi) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
  return v;
}

// Support function of { z : -delta e <= A~ z <= delta e } by enumerating the
// images of the box vertices: the maximum of <x, A~^{-1} v> over all sign
// patterns v in {-delta, +delta}^n.
inline double support_by_vertices(const Matrix& atilde, double delta,
                                  const Vector& x) {
  const int n = static_cast<int>(atilde.rows());
  Eigen::PartialPivLU<Matrix> lu(atilde);
  double best = -std::numeric_limits<double>::infinity();
  for (int mask = 0; mask < (1 << n); ++mask) {
    Vector v(n);
    for (int i = 0; i < n; ++i) v[i] = (mask >> i & 1) ? delta : -delta;
    best = std::max(best, x.dot(lu.solve(v)));
  }
  return best;
}

// Dense minimization of the two-variable min-max model
//   Psi(s) = max_j [ g_j^T s + 1/2 s^T B_j s + hshift_j(s) ] + sigma/2 ||s||^2
// over [-half, half]^2.  hshift is optional and receives the absolute point.
// The box only has to contain the minimizer (||s*|| <= max_j ||g_j|| / sigma
// when every h is zero: s* = -(sigma I + sum gamma B)^{-1} sum gamma g);
// keeping it tight matters because the max envelope has a first-order crease
// at the minimizer, so the grid error scales with the spacing, not its square.
inline double grid_min_psi(
    const std::vector<Vector>& g, const std::vector<Matrix>& B, double sigma,
    int points = 1201, double half = 3.0,
    const std::function<double(int, const Vector&)>& hshift = nullptr,
    const Vector* xk = nullptr) {
  const int m = static_cast<int>(g.size());
  double best = std::numeric_limits<double>::infinity();
  Vector s(2), x(2);
  for (int a = 0; a < points; ++a) {
    s[0] = half * (2.0 * a / (points - 1) - 1.0);
    for (int b = 0; b < points; ++b) {
      s[1] = half * (2.0 * b / (points - 1) - 1.0);
      double worst = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < m; ++j) {
        double q = g[j].dot(s) + 0.5 * s.dot(B[j] * s);
        if (hshift) {
          x = *xk + s;
          q += hshift(j, x);
        }
        worst = std::max(worst, q);
      }
      best = std::min(best, worst + 0.5 * sigma * s.squaredNorm());
    }
  }
  return best;
}

// Minimal CSV reader: splits a file into rows of string fields.
inline std::vector<std::vector<std::string>> parse_csv(
    const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::stringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    rows.push_back(std::move(fields));
  }
  return rows;
}

inline std::vector<std::vector<std::string>> read_csv(
    const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str());
}

// Checks that a document is minimally well-formed XML: tags balance, no
// stray '<' or '>', attributes quoted.  Enough to catch emitter bugs.
inline bool xml_well_formed(const std::string& text) {
  std::vector<std::string> stack;
  std::size_t i = 0;
  while (i < text.size()) {
    char ch = text[i];
    if (ch == '>') return false;
    if (ch != '<') { ++i; continue; }
    std::size_t close = text.find('>', i);
    if (close == std::string::npos) return false;
    std::string tag = text.substr(i + 1, close - i - 1);
    // Quotes must pair up inside the tag.
    int quotes = 0;
    for (char t : tag) {
      if (t == '"') ++quotes;
      if (t == '<') return false;
    }
    if (quotes % 2 != 0) return false;
    if (!tag.empty() && tag[0] == '?') { i = close + 1; continue; }
    if (!tag.empty() && tag[0] == '/') {
      std::string name = tag.substr(1);
      if (stack.empty() || stack.back() != name) return false;
      stack.pop_back();
    } else if (!tag.empty() && tag.back() == '/') {
      // self-closing
    } else {
      std::string name = tag.substr(0, tag.find_first_of(" \t\n"));
      stack.push_back(name);
    }
    i = close + 1;
  }
  return stack.empty();
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace testutil
