#include <catch2/catch_amalgamated.hpp>

#include "pdfpm/scaling.hpp"
#include "test_util.hpp"

using namespace pdfpm;

TEST_CASE("initial scaling matrices") {
  auto id = init_scaling(3, 2, BStrategy::Identity);
  CHECK(id.B.size() == 2);
  CHECK((id.B[0] - Matrix::Identity(3, 3)).norm() == 0.0);

  auto z = init_scaling(3, 2, BStrategy::Zero);
  CHECK(z.B[1].norm() == 0.0);

  auto bf = init_scaling(2, 1, BStrategy::Bfgs);
  CHECK((bf.B[0] - Matrix::Identity(2, 2)).norm() == 0.0);

  CHECK_THROWS_AS(init_scaling(0, 1, BStrategy::Bfgs), ConfigError);
  CHECK_THROWS_AS(init_scaling(2, 1, BStrategy::Bfgs, 0.0), ConfigError);
}

TEST_CASE("secant update worked examples") {
  Vector s(2), y(2);

  SECTION("curvature along e1 doubles") {
    auto st = init_scaling(2, 1, BStrategy::Bfgs);
    s << 1.0, 0.0;
    y << 2.0, 0.0;
    update(st, s, {y});
    Matrix want(2, 2);
    want << 2.0, 0.0, 0.0, 1.0;
    CHECK((st.B[0] - want).norm() <= 1e-14);
  }
  SECTION("negative curvature is skipped") {
    auto st = init_scaling(2, 1, BStrategy::Bfgs);
    s << 1.0, 0.0;
    y << -1.0, 0.0;
    update(st, s, {y});
    CHECK((st.B[0] - Matrix::Identity(2, 2)).norm() == 0.0);
  }
  SECTION("consistent pair is a fixed point") {
    auto st = init_scaling(2, 1, BStrategy::Bfgs);
    s << 1.0, 0.0;
    y << 1.0, 0.0;
    update(st, s, {y});
    CHECK((st.B[0] - Matrix::Identity(2, 2)).norm() <= 1e-14);
  }
}

TEST_CASE("updates preserve symmetry and positive semidefiniteness") {
  Rng rng(44);
  auto st = init_scaling(3, 2, BStrategy::Bfgs);
  for (int trial = 0; trial < 200; ++trial) {
    Vector s = testutil::random_vector(3, rng, -1.0, 1.0);
    std::vector<Vector> y = {testutil::random_vector(3, rng, -1.0, 1.0),
                             testutil::random_vector(3, rng, -1.0, 1.0)};
    update(st, s, y);
    for (const auto& B : st.B) {
      CHECK((B - B.transpose()).norm() <= 1e-12 * (1.0 + B.norm()));
      Eigen::SelfAdjointEigenSolver<Matrix> es(B);
      CHECK(es.eigenvalues().minCoeff() >= -1e-9);
      CHECK(B.norm() <= st.bound + 1e-9);
    }
  }
}

TEST_CASE("updates that would breach the cap are rejected") {
  auto st = init_scaling(2, 1, BStrategy::Bfgs, 10.0);
  Vector s(2), y(2);
  s << 1.0, 0.0;
  y << 1e3, 0.0;  // candidate picks up norm ~1e3
  update(st, s, {y});
  CHECK((st.B[0] - Matrix::Identity(2, 2)).norm() == 0.0);
}

TEST_CASE("degenerate curvature leaves the matrix alone") {
  auto st = init_scaling(2, 1, BStrategy::Bfgs);
  st.B[0] = 1e-20 * Matrix::Identity(2, 2);  // s^T B s below the guard
  Vector s(2), y(2);
  s << 1.0, 0.0;
  y << 1.0, 0.0;
  update(st, s, {y});
  CHECK((st.B[0] - 1e-20 * Matrix::Identity(2, 2)).norm() == 0.0);

  // A tiny but positive s^T y drops only the secant term.
  auto st2 = init_scaling(2, 1, BStrategy::Bfgs);
  Vector ytiny(2);
  ytiny << 1e-15, 0.0;
  update(st2, s, {ytiny});
  Matrix want(2, 2);
  want << 0.0, 0.0, 0.0, 1.0;  // I minus its rank-one along e1
  CHECK((st2.B[0] - want).norm() <= 1e-14);
}

TEST_CASE("non-secant strategies ignore updates") {
  for (auto strat : {BStrategy::Identity, BStrategy::Zero}) {
    auto st = init_scaling(2, 1, strat);
    Matrix before = st.B[0];
    Vector s(2), y(2);
    s << 1.0, 2.0;
    y << 0.5, -1.0;
    update(st, s, {y});
    CHECK((st.B[0] - before).norm() == 0.0);
  }
}

TEST_CASE("strategy names round-trip") {
  for (auto s : {BStrategy::Bfgs, BStrategy::Identity, BStrategy::Zero})
    CHECK(b_strategy_from_string(to_string(s)) == s);
  CHECK_THROWS_AS(b_strategy_from_string("newton"), ConfigError);
}
