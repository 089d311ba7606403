#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pdfpm/model.hpp"
#include "pdfpm/robust.hpp"
#include "pdfpm/solver.hpp"
#include "pdfpm/types.hpp"

namespace pdfpm {

struct ExperimentSpec {
  ProblemSpec base;  // zero nonsmooth terms; robustified per delta
  std::vector<double> deltas{0.0, 0.02, 0.05, 0.1};
  int runs = 200;
  std::uint64_t master_seed = 42;
  SolverConfig config;
};

struct RunRecord {
  int run_index = 0;
  std::uint64_t seed = 0;
  Vector x0;
  RunStatus status = RunStatus::MaxIterExceeded;
  int iterations = 0;
  int subproblem_solves = 0;
  double sigma_final = 0.0;
  Vector x;
  Vector F;
  double certificate = std::numeric_limits<double>::quiet_NaN();
  std::string error;  // non-empty when the run raised instead of returning
};

struct SettingReport {
  double delta = 0.0;
  UncertaintySpec uncertainty;
  ProblemSpec problem;  // the robustified instance the runs solved
  std::vector<RunRecord> records;
  std::vector<int> front;  // indices of records forming the nondominated front
  int success = 0;
  int distinct = 0;
};

struct ExperimentReport {
  ExperimentSpec spec;
  std::vector<SettingReport> settings;
};

// Indices of the nondominated points of `vals`, in input order.  A point u
// is dominated when some v is componentwise <= u (within tol) and differs
// from u by more than tol somewhere; exact duplicates within tol keep their
// first occurrence.
inline std::vector<int> pareto_filter(const std::vector<Vector>& vals,
                                      double tol = 1e-12) {
  const int n = static_cast<int>(vals.size());
  auto leq = [&](const Vector& v, const Vector& u) {
    return (v.array() <= u.array() + tol).all();
  };
  auto same = [&](const Vector& v, const Vector& u) {
    return ((v - u).array().abs() <= tol).all();
  };
  std::vector<int> keep;
  for (int i = 0; i < n; ++i) {
    bool dominated = false;
    for (int j = 0; j < n && !dominated; ++j)
      dominated = j != i && leq(vals[j], vals[i]) && !same(vals[j], vals[i]);
    if (dominated) continue;
    bool dup = false;
    for (int k : keep)
      if (same(vals[k], vals[i])) { dup = true; break; }
    if (!dup) keep.push_back(i);
  }
  return keep;
}

struct OutcomeCounts {
  int success = 0;
  int distinct = 0;
};

// Successes are converged runs; distinct collapses their final points at a
// Euclidean resolution of tol.
inline OutcomeCounts count_outcomes(const std::vector<RunRecord>& records,
                                    double tol = 1e-6) {
  OutcomeCounts out;
  std::vector<Vector> reps;
  for (const auto& r : records) {
    if (r.status != RunStatus::Converged) continue;
    ++out.success;
    bool seen = false;
    for (const auto& v : reps)
      if ((v - r.x).norm() <= tol) { seen = true; break; }
    if (!seen) reps.push_back(r.x);
  }
  out.distinct = static_cast<int>(reps.size());
  return out;
}

namespace detail {

// Compact tag for file names: trailing zeros trimmed.
inline std::string delta_tag(double delta) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", delta);
  return buf;
}

}  // namespace detail

// Runs the full (delta x run) grid.  Every cell draws its starting point
// from its own seed, derived from the master seed, the delta index, and the
// run index, so results are independent of execution order.  Per-run errors
// are recorded and the batch continues.
inline ExperimentReport run_experiment(const ExperimentSpec& spec) {
  spec.base.validate();
  spec.config.validate();
  if (spec.runs < 1) throw ConfigError("experiment: runs must be >= 1");
  if (spec.deltas.empty()) throw ConfigError("experiment: no delta values");

  ExperimentReport report;
  report.spec = spec;

  for (std::size_t d = 0; d < spec.deltas.size(); ++d) {
    SettingReport setting;
    setting.delta = spec.deltas[d];
    setting.uncertainty = gen_uncertainty(
        spec.base.n, spec.base.m(), derive_seed(spec.master_seed, d));
    setting.problem = robustify(spec.base, setting.uncertainty, setting.delta);

    for (int i = 0; i < spec.runs; ++i) {
      RunRecord rec;
      rec.run_index = i;
      // Run streams start at index 1; index 0 seeded the uncertainty draw.
      rec.seed = derive_seed(spec.master_seed, d, static_cast<std::uint64_t>(i) + 1);
      Rng rng(rec.seed);
      rec.x0 = sample_start(setting.problem, rng);
      try {
        RunResult rr = run(setting.problem, rec.x0, spec.config);
        rec.status = rr.status;
        rec.iterations = rr.iterations;
        rec.subproblem_solves = rr.subproblem_solves;
        rec.sigma_final = rr.sigma_final;
        rec.x = rr.x;
        rec.F = rr.F;
        rec.certificate = rr.certificate;
      } catch (const std::exception& e) {
        rec.error = e.what();
        rec.status = RunStatus::SubproblemFailed;
        rec.x = rec.x0;
        rec.F = Vector::Constant(spec.base.m(),
                                 std::numeric_limits<double>::quiet_NaN());
      }
      setting.records.push_back(std::move(rec));
    }

    OutcomeCounts counts = count_outcomes(setting.records);
    setting.success = counts.success;
    setting.distinct = counts.distinct;

    std::vector<Vector> vals;
    std::vector<int> owners;
    for (int i = 0; i < spec.runs; ++i) {
      if (setting.records[i].status != RunStatus::Converged) continue;
      vals.push_back(setting.records[i].F);
      owners.push_back(i);
    }
    for (int idx : pareto_filter(vals)) setting.front.push_back(owners[idx]);

    report.settings.push_back(std::move(setting));
  }
  return report;
}

// ---- file emission -------------------------------------------------------

// Per setting: runs_<name>_<delta>.csv (one row per run) and
// front_<name>_<delta>.csv (the nondominated converged outcomes); one
// summary.csv across settings.  All floating-point fields round-trip.
inline void emit_csv(const ExperimentReport& report,
                     const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::string& name = report.spec.base.name;
  const int n = report.spec.base.n;
  const int m = report.spec.base.m();

  std::ofstream summary(dir / "summary.csv");
  summary << "problem,delta,runs,success,distinct,success_rate\n";

  for (const auto& s : report.settings) {
    const std::string tag = name + "_" + detail::delta_tag(s.delta);

    std::ofstream runs(dir / ("runs_" + tag + ".csv"));
    runs << "run_id,seed";
    for (int i = 1; i <= n; ++i) runs << ",x0_" << i;
    runs << ",status,iters,sigma_final";
    for (int i = 1; i <= n; ++i) runs << ",xstar_" << i;
    for (int j = 1; j <= m; ++j) runs << ",F_" << j;
    runs << ",certificate\n";
    for (const auto& r : s.records) {
      runs << r.run_index << ',' << r.seed;
      for (int i = 0; i < n; ++i) runs << ',' << detail::fmt(r.x0[i]);
      runs << ',' << to_string(r.status) << ',' << r.iterations << ','
           << detail::fmt(r.sigma_final);
      for (int i = 0; i < n; ++i) runs << ',' << detail::fmt(r.x[i]);
      for (int j = 0; j < m; ++j) runs << ',' << detail::fmt(r.F[j]);
      runs << ',' << detail::fmt(r.certificate) << "\n";
    }

    std::ofstream front(dir / ("front_" + tag + ".csv"));
    for (int j = 1; j <= m; ++j) front << (j > 1 ? "," : "") << "F_" << j;
    for (int i = 1; i <= n; ++i) front << ",x_" << i;
    front << "\n";
    for (int idx : s.front) {
      const auto& r = s.records[idx];
      for (int j = 0; j < m; ++j)
        front << (j > 0 ? "," : "") << detail::fmt(r.F[j]);
      for (int i = 0; i < n; ++i) front << ',' << detail::fmt(r.x[i]);
      front << "\n";
    }

    summary << name << ',' << detail::fmt(s.delta) << ',' << s.records.size()
            << ',' << s.success << ',' << s.distinct << ','
            << detail::fmt(static_cast<double>(s.success) /
                           static_cast<double>(s.records.size()))
            << "\n";
  }
}

namespace detail {

struct AxisScale {
  double lo = 0.0, hi = 1.0;
  double px0 = 0.0, px1 = 1.0;
  double map(double v) const {
    return px0 + (v - lo) / (hi - lo) * (px1 - px0);
  }
};

inline std::string svg_num(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

}  // namespace detail

// Scatter plot of one setting in objective space: a gray cloud of F over a
// grid spanning the start box, converged outcomes in red, front members
// ringed.  Biobjective only.
inline void emit_svg(const ExperimentReport& report, int grid_resolution,
                     const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (report.spec.base.m() != 2)
    throw UsageError("plots require exactly two objectives");
  if (grid_resolution < 2)
    throw ConfigError("plots require a grid resolution of at least 2");
  fs::create_directories(dir);

  for (const auto& s : report.settings) {
    const ProblemSpec& prob = s.problem;

    std::vector<std::pair<double, double>> cloud;
    cloud.reserve(static_cast<std::size_t>(grid_resolution) * grid_resolution);
    Vector x(2);
    for (int a = 0; a < grid_resolution; ++a) {
      double ta = static_cast<double>(a) / (grid_resolution - 1);
      x[0] = prob.start_lo[0] + ta * (prob.start_hi[0] - prob.start_lo[0]);
      for (int b = 0; b < grid_resolution; ++b) {
        double tb = static_cast<double>(b) / (grid_resolution - 1);
        x[1] = prob.start_lo[1] + tb * (prob.start_hi[1] - prob.start_lo[1]);
        Vector F = eval_F(prob, x);
        cloud.emplace_back(F[0], F[1]);
      }
    }

    double lo0 = cloud[0].first, hi0 = lo0, lo1 = cloud[0].second, hi1 = lo1;
    auto widen = [&](double f0, double f1) {
      lo0 = std::min(lo0, f0); hi0 = std::max(hi0, f0);
      lo1 = std::min(lo1, f1); hi1 = std::max(hi1, f1);
    };
    for (const auto& c : cloud) widen(c.first, c.second);
    for (const auto& r : s.records)
      if (r.status == RunStatus::Converged) widen(r.F[0], r.F[1]);
    double pad0 = 0.05 * (hi0 - lo0 + 1e-12), pad1 = 0.05 * (hi1 - lo1 + 1e-12);

    const double W = 720, H = 540, ML = 70, MR = 20, MT = 20, MB = 50;
    detail::AxisScale xs{lo0 - pad0, hi0 + pad0, ML, W - MR};
    detail::AxisScale ys{lo1 - pad1, hi1 + pad1, H - MB, MT};  // y grows upward

    std::ofstream out(dir / ("plot_" + report.spec.base.name + "_" +
                             detail::delta_tag(s.delta) + ".svg"));
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
        << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << " " << H
        << "\">\n";
    out << "<style>.cloud{fill:#bbbbbb;fill-opacity:0.35}"
           ".run{fill:#d62728}"
           ".front{fill:#d62728;stroke:#1f77b4;stroke-width:1.5}"
           ".axis{stroke:#333333;stroke-width:1}"
           "text{font-family:sans-serif;font-size:12px;fill:#333333}"
           "</style>\n";

    out << "<line class=\"axis\" x1=\"" << ML << "\" y1=\"" << H - MB
        << "\" x2=\"" << W - MR << "\" y2=\"" << H - MB << "\"/>\n";
    out << "<line class=\"axis\" x1=\"" << ML << "\" y1=\"" << MT
        << "\" x2=\"" << ML << "\" y2=\"" << H - MB << "\"/>\n";
    for (int i = 0; i <= 4; ++i) {
      double f0 = xs.lo + (xs.hi - xs.lo) * i / 4.0;
      double f1 = ys.lo + (ys.hi - ys.lo) * i / 4.0;
      double px = xs.map(f0), py = ys.map(f1);
      out << "<line class=\"axis\" x1=\"" << px << "\" y1=\"" << H - MB
          << "\" x2=\"" << px << "\" y2=\"" << H - MB + 5 << "\"/>\n";
      out << "<text x=\"" << px << "\" y=\"" << H - MB + 18
          << "\" text-anchor=\"middle\">" << detail::svg_num(f0) << "</text>\n";
      out << "<line class=\"axis\" x1=\"" << ML - 5 << "\" y1=\"" << py
          << "\" x2=\"" << ML << "\" y2=\"" << py << "\"/>\n";
      out << "<text x=\"" << ML - 8 << "\" y=\"" << py + 4
          << "\" text-anchor=\"end\">" << detail::svg_num(f1) << "</text>\n";
    }
    out << "<text x=\"" << (ML + W - MR) / 2 << "\" y=\"" << H - 10
        << "\" text-anchor=\"middle\">F1</text>\n";
    out << "<text x=\"16\" y=\"" << (MT + H - MB) / 2
        << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
        << (MT + H - MB) / 2 << ")\">F2</text>\n";

    for (const auto& c : cloud)
      out << "<circle class=\"cloud\" cx=\"" << detail::svg_num(xs.map(c.first))
          << "\" cy=\"" << detail::svg_num(ys.map(c.second))
          << "\" r=\"1.2\"/>\n";

    for (std::size_t i = 0; i < s.records.size(); ++i) {
      const auto& r = s.records[i];
      if (r.status != RunStatus::Converged) continue;
      bool in_front = false;
      for (int idx : s.front)
        if (idx == static_cast<int>(i)) { in_front = true; break; }
      if (in_front) continue;  // drawn after the plain markers
      out << "<circle class=\"run\" cx=\"" << detail::svg_num(xs.map(r.F[0]))
          << "\" cy=\"" << detail::svg_num(ys.map(r.F[1]))
          << "\" r=\"2.5\"/>\n";
    }
    for (int idx : s.front) {
      const auto& r = s.records[idx];
      out << "<circle class=\"front\" cx=\"" << detail::svg_num(xs.map(r.F[0]))
          << "\" cy=\"" << detail::svg_num(ys.map(r.F[1]))
          << "\" r=\"3.5\" data-f1=\"" << detail::fmt(r.F[0])
          << "\" data-f2=\"" << detail::fmt(r.F[1]) << "\"/>\n";
    }
    out << "</svg>\n";
  }
}

// Effective settings, seeds, and sampled uncertainty matrices, written next
// to the result files so a batch is reproducible from its output alone.
inline void write_config_echo(const ExperimentReport& report,
                              const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json doc;
  doc["problem"] = report.spec.base.name;
  doc["n"] = report.spec.base.n;
  doc["m"] = report.spec.base.m();
  doc["runs"] = report.spec.runs;
  doc["master_seed"] = report.spec.master_seed;
  doc["deltas"] = report.spec.deltas;

  const SolverConfig& c = report.spec.config;
  doc["config"] = {
      {"alpha", c.alpha},
      {"eps", c.eps},
      {"sigma0", c.sigma0},
      {"max_iter", c.max_iter},
      {"grad_mode", to_string(c.grad_mode)},
      {"lambda_floor", c.lambda_policy.floor},
      {"b_strategy", to_string(c.b_strategy)},
      {"b_bound", c.b_bound},
      {"subproblem_tol", c.subproblem_tol},
  };

  doc["settings"] = nlohmann::json::array();
  for (const auto& s : report.settings) {
    nlohmann::json js;
    js["delta"] = s.delta;
    js["uncertainty_seed"] = s.uncertainty.seed;
    js["atilde"] = nlohmann::json::array();
    for (const auto& A : s.uncertainty.atilde) {
      nlohmann::json rows = nlohmann::json::array();
      for (Eigen::Index r = 0; r < A.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index col = 0; col < A.cols(); ++col) row.push_back(A(r, col));
        rows.push_back(row);
      }
      js["atilde"].push_back(rows);
    }
    doc["settings"].push_back(js);
  }

  std::ofstream out(dir / "config_echo.json");
  out << doc.dump(2) << "\n";
}

}  // namespace pdfpm
