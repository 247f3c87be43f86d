#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <vector>

#include "krigseq/design_gen.hpp"
#include "krigseq/rng.hpp"

using namespace krigseq;

TEST_SUITE("design_gen") {

TEST_CASE("lhs stratification: exactly one point per axis stratum") {
  for (std::uint64_t seed : {3ull, 19ull, 71ull}) {
    const int n = 13, d = 3;
    LhsDesign des = lhs_maximin(n, d, 200, seed);
    REQUIRE(des.points.rows() == n);
    REQUIRE(des.points.cols() == d);
    for (int k = 0; k < d; ++k) {
      std::set<int> strata;
      for (int i = 0; i < n; ++i) {
        const double v = des.points(i, k);
        CHECK(v > 0.0);
        CHECK(v < 1.0);
        strata.insert(static_cast<int>(std::floor(v * n)));
      }
      CHECK(strata.size() == static_cast<std::size_t>(n));  // all n strata hit
    }
  }
}

TEST_CASE("lhs n=2 d=1: one point in each half") {
  LhsDesign des = lhs_maximin(2, 1, 0, 5);
  const double a = std::min(des.points(0, 0), des.points(1, 0));
  const double b = std::max(des.points(0, 0), des.points(1, 0));
  CHECK(a < 0.5);
  CHECK(b > 0.5);
}

TEST_CASE("hill climbing never lowers the maximin score") {
  for (std::uint64_t seed : {11ull, 29ull, 57ull, 101ull}) {
    const LhsDesign raw = lhs_maximin(12, 2, 0, seed);
    double prev = raw.maximin_score;
    for (int iters : {10, 50, 200, 1000}) {
      const LhsDesign improved = lhs_maximin(12, 2, iters, seed);
      CHECK(improved.maximin_score >= prev - 1e-15);
      // reported score matches the actual point set
      CHECK(improved.maximin_score ==
            doctest::Approx(min_pairwise_distance(improved.points)).epsilon(1e-14));
      prev = improved.maximin_score;
    }
  }
}

TEST_CASE("seeded quality floor: n=10 d=2 iters=1000 reaches score >= 0.18") {
  for (std::uint64_t seed : {1ull, 2ull, 7ull, 42ull, 123ull, 2026ull}) {
    CAPTURE(seed);
    CHECK(lhs_maximin(10, 2, 1000, seed).maximin_score >= 0.18);
  }
}

TEST_CASE("lhs determinism and seed sensitivity") {
  const LhsDesign a = lhs_maximin(9, 4, 300, 77);
  const LhsDesign b = lhs_maximin(9, 4, 300, 77);
  const LhsDesign c = lhs_maximin(9, 4, 300, 78);
  CHECK((a.points - b.points).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.points - c.points).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("lhs argument validation") {
  CHECK_THROWS_AS((void)lhs_maximin(1, 2, 10, 0), ArgumentError);
  CHECK_THROWS_AS((void)lhs_maximin(5, 0, 10, 0), ArgumentError);
  CHECK_THROWS_AS((void)lhs_maximin(5, 2, -1, 0), ArgumentError);
}

TEST_CASE("nested_pair: fine design is an exact leading block") {
  const Eigen::MatrixXd fine = lhs_maximin(4, 2, 500, 13).points;
  const Eigen::MatrixXd coarse = nested_pair(fine, 11, 99);
  REQUIRE(coarse.rows() == 11);
  REQUIRE(coarse.cols() == 2);
  CHECK((coarse.topRows(4) - fine).cwiseAbs().maxCoeff() == 0.0);
  // all coordinates live in the unit cube
  CHECK(coarse.minCoeff() > 0.0);
  CHECK(coarse.maxCoeff() < 1.0);
}

TEST_CASE("nested_pair removal audit: each fine point evicts its nearest live candidate") {
  const Eigen::MatrixXd fine = lhs_maximin(5, 3, 400, 21).points;
  const NestedPair np = nested_pair_detailed(fine, 14, 55);
  REQUIRE(np.removed_candidate.size() == 5);

  std::vector<bool> alive(14, true);
  for (int i = 0; i < 5; ++i) {
    const int rm = np.removed_candidate[static_cast<std::size_t>(i)];
    REQUIRE(rm >= 0);
    REQUIRE(rm < 14);
    REQUIRE(alive[static_cast<std::size_t>(rm)]);
    const double rm_dist = (np.candidates.row(rm) - fine.row(i)).norm();
    for (int j = 0; j < 14; ++j)
      if (alive[static_cast<std::size_t>(j)])
        CHECK(rm_dist <= (np.candidates.row(j) - fine.row(i)).norm() + 1e-15);
    alive[static_cast<std::size_t>(rm)] = false;
  }

  // survivors appear after the fine block, in candidate order
  int row = 5;
  for (int j = 0; j < 14; ++j)
    if (alive[static_cast<std::size_t>(j)]) {
      CHECK((np.coarse.row(row) - np.candidates.row(j)).cwiseAbs().maxCoeff() == 0.0);
      ++row;
    }
  CHECK(row == 14);
}

TEST_CASE("nested_pair edge case n_c == n_f returns the fine design itself") {
  const Eigen::MatrixXd fine = lhs_maximin(6, 2, 100, 31).points;
  const Eigen::MatrixXd coarse = nested_pair(fine, 6, 8);
  CHECK((coarse - fine).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("nested_pair rejects inconsistent sizes") {
  const Eigen::MatrixXd fine = lhs_maximin(6, 2, 100, 31).points;
  CHECK_THROWS_AS((void)nested_pair(fine, 5, 0), ArgumentError);
  CHECK_THROWS_AS((void)nested_pair(Eigen::MatrixXd(0, 2), 5, 0), ArgumentError);
}

TEST_CASE("halton points: unit cube, deterministic per seed, near-uniform") {
  const Eigen::MatrixXd A = halton_points(2000, 2, 9);
  const Eigen::MatrixXd B = halton_points(2000, 2, 9);
  const Eigen::MatrixXd C = halton_points(2000, 2, 10);
  CHECK((A - B).cwiseAbs().maxCoeff() == 0.0);
  CHECK((A - C).cwiseAbs().maxCoeff() > 0.0);
  CHECK(A.minCoeff() >= 0.0);
  CHECK(A.maxCoeff() < 1.0);

  // each axis-aligned quadrant holds ~25% of points
  int q00 = 0, q01 = 0, q10 = 0, q11 = 0;
  for (int i = 0; i < A.rows(); ++i) {
    const bool lx = A(i, 0) < 0.5, ly = A(i, 1) < 0.5;
    (lx ? (ly ? q00 : q01) : (ly ? q10 : q11))++;
  }
  for (int q : {q00, q01, q10, q11}) CHECK(std::abs(q - 500) <= 50);
}

TEST_CASE("halton rejects unsupported dimensions") {
  CHECK_THROWS_AS((void)halton_points(10, 0, 0), ArgumentError);
  CHECK_THROWS_AS((void)halton_points(10, 17, 0), ArgumentError);
  CHECK_THROWS_AS((void)halton_points(0, 2, 0), ArgumentError);
}

TEST_CASE("design CSV round-trip preserves every bit") {
  const Eigen::MatrixXd X = lhs_maximin(7, 5, 100, 3).points;
  const std::string path = "design_roundtrip_test.csv";
  save_design_csv(X, path);
  const Eigen::MatrixXd Y = load_design_csv(path);
  REQUIRE(Y.rows() == X.rows());
  REQUIRE(Y.cols() == X.cols());
  CHECK((X - Y).cwiseAbs().maxCoeff() == 0.0);
  std::remove(path.c_str());
}

TEST_CASE("design CSV load rejects bad files") {
  CHECK_THROWS_AS((void)load_design_csv("no_such_file_anywhere.csv"), IoError);
  {
    std::FILE* f = std::fopen("ragged_test.csv", "w");
    std::fputs("1,2\n3\n", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS((void)load_design_csv("ragged_test.csv"), IoError);
  std::remove("ragged_test.csv");
}

}  // TEST_SUITE
