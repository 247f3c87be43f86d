#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "krigseq/errors.hpp"

namespace krigseq {

/// Latin hypercube design on the unit cube: exactly one point per axis
/// stratum of width 1/n, improved toward maximin by accepted coordinate swaps.
struct LhsDesign {
  Eigen::MatrixXd points;     // n×d
  double maximin_score = 0.0;  // min pairwise Euclidean distance
  std::uint64_t seed = 0;
};

/// Smallest pairwise Euclidean distance between the rows of X.
[[nodiscard]] double min_pairwise_distance(const Eigen::MatrixXd& X);

/// Random LHS followed by `iters` proposed single-axis value swaps between
/// two points, each accepted only when the min pairwise distance increases.
/// Deterministic under `seed`. Throws ArgumentError for n < 2.
[[nodiscard]] LhsDesign lhs_maximin(int n, int d, int iters, std::uint64_t seed);

/// Result of the nested-design construction, with the audit trail of the
/// greedy matching (candidate removed for each fine point, in fine order).
struct NestedPair {
  Eigen::MatrixXd coarse;            // n_c×d, contains fine rows first
  Eigen::MatrixXd candidates;        // the raw LHS the removals came from
  std::vector<int> removed_candidate;  // removed_candidate[i] pairs fine i
};

/// Builds a coarse design of n_c points containing D_fine exactly: generate a
/// candidate LHS of n_c points, greedily remove the candidate nearest each
/// fine point (fine points in row order, ties -> lowest candidate index), and
/// concatenate D_fine with the survivors. Requires n_c >= rows(D_fine).
[[nodiscard]] NestedPair nested_pair_detailed(const Eigen::MatrixXd& D_fine,
                                              int n_c, std::uint64_t seed,
                                              int lhs_iters = 500);
[[nodiscard]] Eigen::MatrixXd nested_pair(const Eigen::MatrixXd& D_fine, int n_c,
                                          std::uint64_t seed, int lhs_iters = 500);

/// m points of a Halton sequence under a seeded Cranley–Patterson rotation:
/// low-discrepancy, reproducible, and distinct across seeds. d <= 16.
[[nodiscard]] Eigen::MatrixXd halton_points(int m, int d, std::uint64_t seed);

/// Unit-coordinate design round-trip as plain CSV (rows are points, "%.17g").
void save_design_csv(const Eigen::MatrixXd& X, const std::string& path);
[[nodiscard]] Eigen::MatrixXd load_design_csv(const std::string& path);

}  // namespace krigseq
