#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>

#include "krigseq/kriging.hpp"
#include "krigseq/loocv.hpp"

namespace krigseq {

/// Nearest-site partition of the unit cube in the Euclidean metric.
/// Ties deterministically resolve to the lowest site index.
struct VoronoiPartition {
  Eigen::MatrixXd sites;  // n×d
};

[[nodiscard]] VoronoiPartition make_voronoi(Eigen::MatrixXd sites);
[[nodiscard]] int voronoi_index(const VoronoiPartition& partition, const Eigen::VectorXd& x);

enum class GridKind { LowDiscrepancy, UniformRandom };

/// Candidate/quadrature point set for criterion argmax and IMSE averages.
struct CandidateGrid {
  Eigen::MatrixXd points;  // M×d, unit cube
  GridKind kind = GridKind::LowDiscrepancy;
  std::uint64_t seed = 0;
};

/// M >= 100 required. Low-discrepancy grids use a rotated Halton sequence.
[[nodiscard]] CandidateGrid make_candidate_grid(int d, int M, std::uint64_t seed,
                                                GridKind kind = GridKind::LowDiscrepancy);
[[nodiscard]] constexpr int default_grid_size(int d) { return 2000 * d; }

/// Cross-validation-adjusted mean squared error at x:
///   k_n(x,x) · (1 + ratios[cell of x])
/// with exactly one Voronoi indicator active.
[[nodiscard]] double adjusted_mse(const KrigingModel& model, const LoocvDiagnostics& diag,
                                  const VoronoiPartition& partition, const Eigen::VectorXd& x);

/// Result of a single-point criterion: the winning candidate's index in the
/// grid it was drawn from, the (possibly locally refined) point, and the
/// criterion value at that point.
struct Selection {
  int grid_index = -1;
  Eigen::VectorXd point;
  double value = 0.0;
};

/// Deterministic local coordinate ascent from a grid argmax: probe ±h along
/// each axis inside the unit cube, accept improvements, halve h when a pass
/// stalls. Shared by the grid criteria and the sequential engines so their
/// selections coincide when their objectives do.
[[nodiscard]] Selection refine_selection(
    const std::function<double(const Eigen::VectorXd&)>& objective, int grid_index,
    Eigen::VectorXd x0, double v0);

/// argmax of the kriging variance over the grid, then local coordinate
/// refinement from the best grid point. Grid ties break to the first index.
[[nodiscard]] Selection select_maxvar(const KrigingModel& model, const CandidateGrid& grid);

/// argmax over the grid of the IMSE reduction from adding the candidate,
///   mean over quadrature nodes u of  k_n(u,x)² / (k_n(x,x) + sigma2·eta),
/// the exact one-point-conditioning identity, with the same grid as both
/// candidate set and quadrature rule. No local refinement.
[[nodiscard]] Selection select_min_imse(const KrigingModel& model, const CandidateGrid& grid);

/// Per-node contributions of the IMSE reduction for one candidate x
/// (mean of the returned vector = the reduction select_min_imse ranks by).
[[nodiscard]] Eigen::VectorXd imse_reduction_terms(const KrigingModel& model,
                                                   const Eigen::MatrixXd& quad_points,
                                                   const Eigen::VectorXd& x);

/// Fresh maximin-LHS candidate set for the jackknife criterion (100·d points).
[[nodiscard]] Eigen::MatrixXd kleicrit_candidates(int d, std::uint64_t seed);

/// argmax of the jackknife predictor variance over the supplied candidates.
[[nodiscard]] Selection select_kleicrit(const KrigingModel& model,
                                        const Eigen::MatrixXd& candidates);

/// argmax of adjusted_mse over the grid plus local refinement. With all-zero
/// diagnostics this reproduces select_maxvar exactly, index and point.
[[nodiscard]] Selection select_adjmmse(const KrigingModel& model, const LoocvDiagnostics& diag,
                                       const CandidateGrid& grid);

enum class CriterionKind { MaxVar, MinImse, KleiCrit, AdjMmse };

[[nodiscard]] std::string to_string(CriterionKind kind);
[[nodiscard]] CriterionKind criterion_from_string(const std::string& name);

}  // namespace krigseq
