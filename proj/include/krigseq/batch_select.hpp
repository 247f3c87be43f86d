#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "krigseq/criteria.hpp"
#include "krigseq/kriging.hpp"
#include "krigseq/loocv.hpp"

namespace krigseq {

/// Unnormalized target density on the unit cube for the sampler (and, in the
/// clustering code, the variance used to score centers). Must be nonnegative.
using DensityFn = std::function<double(const Eigen::VectorXd&)>;

/// Metropolis-Hastings settings. Defaults are the desk-scale profile
/// (20000 / 2000); the benchmark profile uses 50000 / 5000.
struct MhConfig {
  int n_samples = 20000;            // total chain length including burn-in
  int burn_in = 2000;               // discarded prefix; must be < n_samples
  double proposal_std = 0.5;        // initial per-axis standard deviation
  double target_acceptance = 0.30;  // adaptation steers toward this rate
  int adapt_interval = 200;         // proposals per adaptation window
  std::uint64_t seed = 0;
};

struct MhResult {
  Eigen::MatrixXd samples;      // (n_samples - burn_in) x d chain states
  double acceptance_rate = 0.0;  // accepted fraction after burn-in
  double proposal_std = 0.0;     // standard deviation after adaptation froze
};

/// Random-walk Metropolis-Hastings on the unit cube with a Gaussian proposal
/// centered at the current state. Proposals outside the cube are rejected
/// (the density is zero outside). During burn-in the proposal standard
/// deviation is multiplied or divided by 1.1 once per adapt_interval
/// proposals to steer the window's acceptance rate toward the target;
/// adaptation is frozen afterwards. The chain starts at the cube center; if
/// the density is zero there, a design-free restart point is searched along a
/// seeded low-discrepancy sequence (failure to find one is an error).
[[nodiscard]] MhResult mh_sample(const DensityFn& density, int dim, const MhConfig& cfg);

/// N representative points extracted from a sample cloud.
struct ClusterSet {
  Eigen::MatrixXd centers;  // N x d
  int N = 0;
  // min over centers of the scoring function (kriging variance), NaN when
  // nmeans was called without one.
  double min_center_var = std::numeric_limits<double>::quiet_NaN();
};

/// Lloyd clustering of the samples into N centers: greedy farthest-point
/// seeding under the given seed, then nearest-center assignment (ties to the
/// lowest center index) and centroid updates until the assignment reaches a
/// fixpoint or 100 iterations. An empty cluster is re-seeded at the sample
/// farthest from every nonempty center (deterministic). When `variance` is
/// given, min_center_var is filled from it. `wcss_trace`, when non-null,
/// receives the within-cluster sum of squares after every assignment step.
[[nodiscard]] ClusterSet nmeans(const Eigen::MatrixXd& samples, int N, std::uint64_t seed,
                                const DensityFn& variance = nullptr,
                                std::vector<double>* wcss_trace = nullptr);

/// Cluster-count rule: scan N in [q, N_max] and keep the N whose worst center
/// has the largest kriging variance (ties to the smallest N). Each candidate
/// N clusters with its own seed derived from (seed, N) so the scan is
/// reproducible. Ranges wider than full_scan_limit are scanned on a strided
/// subset of about scan_points values that always contains q and N_max.
/// The winning clustering is returned through `chosen` when non-null.
[[nodiscard]] int choose_cluster_count(const KrigingModel& model, const Eigen::MatrixXd& samples,
                                       int q, int N_max, std::uint64_t seed,
                                       ClusterSet* chosen = nullptr, int full_scan_limit = 24,
                                       int scan_points = 12);

/// Same rule with the scoring variance supplied directly, for callers whose
/// predictive variance is not a plain kriging model's.
[[nodiscard]] int choose_cluster_count(const DensityFn& variance, const Eigen::MatrixXd& samples,
                                       int q, int N_max, std::uint64_t seed,
                                       ClusterSet* chosen = nullptr, int full_scan_limit = 24,
                                       int scan_points = 12);

/// Knobs for the q-points-at-a-time pipeline. Tolerances never live here.
struct BatchOptions {
  MhConfig mh{};            // sampler profile (seed included)
  int n_max = 0;            // cluster-count ceiling; 0 means 3q
  int full_scan_limit = 24;  // widest range scanned exhaustively
  int scan_points = 12;      // strided scan size beyond that
  int thin_limit = 5000;     // samples kept for clustering
};

/// The q-points pipeline with both densities supplied directly: sample the
/// chain from `variance`, cluster (count chosen by the scan rule above), and
/// return the q centers where `score` is largest (rank order, ties to the
/// lower center index). Centers with exactly zero variance are skipped so no
/// returned point sits on a design point. The surviving cluster set is
/// returned through `centers` when non-null.
[[nodiscard]] Eigen::MatrixXd select_batch_scored(const DensityFn& variance,
                                                  const DensityFn& score, int dim, int q,
                                                  const BatchOptions& options = {},
                                                  ClusterSet* centers = nullptr);

/// q points at a time: sample the chain from k_n(x,x), cluster, pick the
/// cluster count, and return the q centers with the largest adjusted MSE
/// (rank order, ties to the lower center index). Centers with exactly zero
/// kriging variance are skipped so no returned point sits on a design point.
/// The surviving cluster set is returned through `centers` when non-null.
[[nodiscard]] Eigen::MatrixXd select_batch_adjmmse(const KrigingModel& model,
                                                   const LoocvDiagnostics& diag, int q,
                                                   const BatchOptions& options = {},
                                                   ClusterSet* centers = nullptr);

/// Liar baseline: q sequential IMSE-reduction picks, each followed by
/// conditioning the model on its own prediction at the picked point.
[[nodiscard]] Eigen::MatrixXd select_batch_liar_minimse(const KrigingModel& model, int q,
                                                        const CandidateGrid& grid);

}  // namespace krigseq
