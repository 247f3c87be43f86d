#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "krigseq/domain.hpp"
#include "krigseq/mf_sequential.hpp"

namespace krigseq {

/// A code level evaluated at physical (unscaled) coordinates.
using Evaluator = std::function<double(const Eigen::VectorXd&)>;

/// A named benchmark: a stack of code levels over a physical domain, the
/// per-level run times, and the recipe for its fixed held-out test set.
struct BenchmarkProblem {
  std::string name;
  Domain domain;
  std::vector<Evaluator> levels;  ///< level 0 = coarsest; back() is the truth
  CostModel cost;
  int test_size = 1000;
  std::uint64_t test_seed = 0;
};

/// Ackley's function on [-2,2]^2. Global minimum 0 at the origin.
[[nodiscard]] double ackley(double x, double y);

/// Shubert's function on [-2,2]^2 (product of two 5-term cosine sums).
[[nodiscard]] double shubert(double x, double y);

/// Michalewicz's function on [0,pi]^2 with steepness exponent 20.
[[nodiscard]] double michalewicz(double x, double y);

/// Physical ranges of the eight tank parameters, in order:
/// P [MPa], R_int [mm], T_shell [mm], T_cap [mm], E_shell [GPa],
/// E_cap [GPa], sigma_y,shell [MPa], sigma_y,cap [MPa].
[[nodiscard]] const Domain& tank_domain();

/// Thick-shell von Mises stress of the 1D tank simplification:
///   (3/2) * (R+T)^3 / ((R+T)^3 - R^3) * P
/// with R = R_int and T = T_shell. Depends only on the first three
/// parameters; the cap and material parameters are carried for interface
/// uniformity with the accurate code. Throws ArgumentError unless x has
/// exactly 8 entries and DomainError if any entry leaves its range.
[[nodiscard]] double tank_coarse(const Eigen::VectorXd& x);

/// Deterministic smooth stand-in for the accurate tank code. Evaluates
///   a * tank_coarse(x) + b * (g(x) - c0 - c1 * tank_coarse(x))
/// where g is a fixed sum of seeded cosine features of the unit-scaled
/// parameters (always including a cap-thickness term) and (c0, c1) is the
/// least-squares regression of g on the coarse stress over the calibration
/// sample, so the second term is empirically uncorrelated noise whose
/// amplitude b sets the coarse/accurate correlation.
struct TankSynthetic {
  double a = 1.0;
  double b = 0.0;
  double c0 = 0.0;
  double c1 = 0.0;
  Eigen::MatrixXd omega;    ///< feature frequencies, one row per feature
  Eigen::VectorXd phase;    ///< feature phases
  Eigen::VectorXd amp;      ///< feature amplitudes
  double corr_target = 0.0;
  double measured_corr = 0.0;  ///< empirical correlation on the calibration sample

  /// The raw feature sum g(x) before centering, at physical coordinates.
  [[nodiscard]] double feature(const Eigen::VectorXd& x) const;

  /// The synthetic accurate stress at physical coordinates.
  [[nodiscard]] double operator()(const Eigen::VectorXd& x) const;
};

/// Calibrates a synthetic accurate code whose empirical correlation with
/// tank_coarse over a fixed 10^4-point uniform sample equals corr_target.
/// response_id in {1,2,3} selects an independent feature stream (matching
/// the three responses of the tank study); corr_target must lie in (0,1).
/// Throws ConstructionError if the calibration sample degenerates or the
/// achieved correlation misses the target by more than 0.02.
[[nodiscard]] TankSynthetic make_tank_synthetic(int response_id, double corr_target,
                                                std::uint64_t seed);

/// One-shot form of the synthetic accurate code. Calibrations are cached
/// per (response_id, corr_target, seed), so repeated calls are cheap and
/// concurrent evaluation is safe.
[[nodiscard]] double tank_fine_synthetic(const Eigen::VectorXd& x, int response_id,
                                         double corr_target, std::uint64_t seed);

/// Names accepted by get_problem, in listing order.
[[nodiscard]] std::vector<std::string> problem_names();

/// Resolves a registry name ("ackley", "shubert", "michalewicz",
/// "tank-r1", "tank-r2", "tank-r3") to its benchmark definition.
/// Throws ConfigError for unknown names.
[[nodiscard]] BenchmarkProblem get_problem(const std::string& name);

/// The problem's fixed held-out sample: low-discrepancy unit-cube rows and
/// the truth (finest-level) output at each, per the problem's test recipe.
[[nodiscard]] TestSet problem_test_set(const BenchmarkProblem& problem);

/// RMSE of pred against truth over the rows of X (physical coordinates),
/// divided by the truth's max - min over the same rows. Throws
/// ArgumentError when X has fewer than 2 rows or the truth is constant.
[[nodiscard]] double normalized_rmse(const Evaluator& pred, const Evaluator& truth,
                                     const Eigen::MatrixXd& X);

}  // namespace krigseq
